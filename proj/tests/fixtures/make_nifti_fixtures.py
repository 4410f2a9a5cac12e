"""Writes the NIfTI-1 golden fixtures used by test_volume_io.

Header fields are packed from the NIfTI-1 field table directly
(offset, C type) so the fixtures do not depend on the C++ writer.
"""
import struct
from pathlib import Path

HERE = Path(__file__).parent


def header(dims, datatype, bitpix, pixdim, slope, inter, vox_offset=352.0):
    h = bytearray(348)
    struct.pack_into("<i", h, 0, 348)                      # sizeof_hdr
    struct.pack_into("<8h", h, 40, 3, *dims, 1, 1, 1, 1)   # dim[8]
    struct.pack_into("<h", h, 70, datatype)                # datatype
    struct.pack_into("<h", h, 72, bitpix)                  # bitpix
    struct.pack_into("<8f", h, 76, 1.0, *pixdim, 0, 0, 0, 0)  # pixdim[8]
    struct.pack_into("<f", h, 108, vox_offset)             # vox_offset
    struct.pack_into("<f", h, 112, slope)                  # scl_slope
    struct.pack_into("<f", h, 116, inter)                  # scl_inter
    struct.pack_into("<b", h, 123, 2)                      # xyzt_units = mm
    h[344:348] = b"n+1\0"                                  # magic
    return bytes(h) + b"\0\0\0\0"                          # extension flag


def main():
    dims = (3, 2, 2)
    stored = list(range(-6, 6))
    (HERE / "int16_slope2_inter1.nii").write_bytes(
        header(dims, 4, 16, (1.56, 1.56, 1.56), 2.0, 1.0) + struct.pack("<12h", *stored))
    (HERE / "uint8_slope0.nii").write_bytes(
        header(dims, 2, 8, (1.0, 2.0, 3.0), 0.0, 0.0) + bytes([0, 1, 2, 3, 4, 5, 250, 251, 252, 253, 254, 255]))
    (HERE / "float64_unsupported.nii").write_bytes(
        header(dims, 64, 64, (1.0, 1.0, 1.0), 1.0, 0.0) + struct.pack("<12d", *[float(s) for s in stored]))
    # expected voxel values v = slope * s + inter, X-fastest
    (HERE / "int16_slope2_inter1.expected").write_text(" ".join(str(2 * s + 1) for s in stored) + "\n")


if __name__ == "__main__":
    main()
