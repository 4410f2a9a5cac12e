#pragma once

#include <array>
#include <cstring>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "svox/binary.hpp"
#include "svox/volume.hpp"

namespace svox {

// Internal format: 16-byte magic, u32 LE header length, UTF-8 JSON header,
// then X-fastest LE float32 payload.
inline constexpr std::array<char, 16> kVolumeMagic{'S', 'V', 'O', 'X', 'V', 'O', 'L', '1',
                                                   0,   0,   0,   0,   0,   0,   0,   0};
inline constexpr std::array<char, 4> kNiftiMagic{'n', '+', '1', '\0'};
inline constexpr std::size_t kNiftiHeaderSize = 348;
inline constexpr std::size_t kNiftiDataOffset = 352;

enum class NiftiType : std::int16_t { uint8 = 2, int16 = 4, float32 = 16 };

namespace detail {

inline bool has_prefix(std::span<const std::uint8_t> bytes, std::size_t at, std::span<const char> magic) {
  if (bytes.size() < at + magic.size()) return false;
  return std::memcmp(bytes.data() + at, magic.data(), magic.size()) == 0;
}

inline Volume decode_internal_volume(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes, "volume_io");
  r.take(kVolumeMagic.size(), "magic");
  const std::uint32_t header_len = r.u32("header length");
  const std::size_t header_at = r.offset();
  const auto header_bytes = r.take(header_len, "json header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header_bytes.begin(), header_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    r.fail(header_at, std::string("malformed header: ") + e.what());
  }
  Volume v;
  try {
    const auto dims = h.at("dims").get<std::array<long long, 3>>();
    for (int a = 0; a < 3; ++a) {
      if (dims[a] <= 0 || dims[a] > (1 << 20)) r.fail(header_at, "malformed header: invalid dims");
      v.dims[a] = static_cast<int>(dims[a]);
    }
    v.spacing = h.at("spacing_mm").get<Spacing>();
    v.units = units_from_string(h.at("units").get<std::string>());
    v.orientation = orientation_from_string(h.at("orientation").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    r.fail(header_at, std::string("malformed header: ") + e.what());
  }
  const std::size_t n = voxel_count(v.dims);
  const std::size_t payload_at = r.offset();
  const auto payload = r.take(n * 4, "voxel payload");
  v.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(payload[4 * i + b]) << (8 * b);
    v.data[i] = std::bit_cast<float>(u);
    if (!std::isfinite(v.data[i])) r.fail(payload_at + 4 * i, "non-finite voxel value");
  }
  if (r.remaining() != 0) r.fail(r.offset(), "trailing bytes after voxel payload");
  for (int a = 0; a < 3; ++a)
    if (!(v.spacing[a] > 0.0)) r.fail(header_at, "malformed header: spacing must be positive");
  return v;
}

inline std::vector<std::uint8_t> encode_internal_volume(const Volume& v) {
  nlohmann::json h;
  h["dims"] = v.dims;
  h["spacing_mm"] = v.spacing;
  h["units"] = std::string(to_string(v.units));
  h["orientation"] = std::string(to_string(v.orientation));
  const std::string header = h.dump();
  binary::Writer w;
  w.bytes(kVolumeMagic.data(), kVolumeMagic.size());
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header.data(), header.size());
  w.f32s(v.data);
  return std::move(w.buffer());
}

inline Volume decode_nifti(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes, "volume_io");
  const std::int32_t sizeof_hdr = r.i32("sizeof_hdr");
  if (sizeof_hdr != static_cast<std::int32_t>(kNiftiHeaderSize)) {
    r.fail(0, "malformed header: sizeof_hdr is " + std::to_string(sizeof_hdr) +
                  " (only little-endian NIfTI-1 is supported)");
  }
  r.seek(40);
  std::array<std::int16_t, 8> dim{};
  for (auto& d : dim) d = r.i16("dim");
  if (dim[0] != 3) r.fail(40, "malformed header: dim[0] must be 3, got " + std::to_string(dim[0]));
  for (int a = 1; a <= 3; ++a)
    if (dim[a] <= 0) r.fail(40 + 2 * a, "malformed header: non-positive dim[" + std::to_string(a) + "]");
  r.seek(70);
  const std::int16_t datatype = r.i16("datatype");
  const std::int16_t bitpix = r.i16("bitpix");
  std::size_t elem = 0;
  switch (datatype) {
    case static_cast<std::int16_t>(NiftiType::uint8): elem = 1; break;
    case static_cast<std::int16_t>(NiftiType::int16): elem = 2; break;
    case static_cast<std::int16_t>(NiftiType::float32): elem = 4; break;
    default: r.fail(70, "unsupported data type code " + std::to_string(datatype));
  }
  if (bitpix != static_cast<std::int16_t>(8 * elem))
    r.fail(72, "malformed header: bitpix " + std::to_string(bitpix) + " does not match datatype");
  r.seek(76);
  std::array<float, 8> pixdim{};
  for (auto& p : pixdim) p = r.f32("pixdim");
  const float vox_offset = r.f32("vox_offset");
  float slope = r.f32("scl_slope");
  const float inter = r.f32("scl_inter");
  if (slope == 0.0f || !std::isfinite(slope)) slope = 1.0f;
  r.seek(148);
  const auto descrip = r.take(80, "descrip");
  r.seek(344);
  r.take(4, "magic");
  if (!(vox_offset >= static_cast<float>(kNiftiHeaderSize)) || vox_offset > 1e9f)
    r.fail(108, "malformed header: invalid vox_offset");

  Volume v;
  v.dims = {dim[1], dim[2], dim[3]};
  for (int a = 0; a < 3; ++a) {
    const float p = std::fabs(pixdim[a + 1]);
    v.spacing[a] = p > 0.0f && std::isfinite(p) ? static_cast<double>(p) : 1.0;
  }
  const std::string desc(reinterpret_cast<const char*>(descrip.data()),
                         strnlen(reinterpret_cast<const char*>(descrip.data()), descrip.size()));
  if (desc.find("units=hounsfield") != std::string::npos) v.units = Units::hounsfield;

  const std::size_t n = voxel_count(v.dims);
  r.seek(static_cast<std::size_t>(vox_offset));
  const std::size_t payload_at = r.offset();
  const auto payload = r.take(n * elem, "voxel payload");
  v.data.resize(n);
  const double s = slope, b = inter;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = payload.data() + i * elem;
    double raw = 0.0;
    if (elem == 1) {
      raw = p[0];
    } else if (elem == 2) {
      raw = static_cast<std::int16_t>(static_cast<std::uint16_t>(p[0] | (p[1] << 8)));
    } else {
      const std::uint32_t u = p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
      raw = std::bit_cast<float>(u);
    }
    v.data[i] = static_cast<float>(s * raw + b);
    if (!std::isfinite(v.data[i])) r.fail(payload_at + i * elem, "non-finite voxel value");
  }
  return v;
}

}  // namespace detail

/// float32 NIfTI-1 single file (.nii), slope 1 / intercept 0.
inline std::vector<std::uint8_t> encode_nifti(const Volume& v) {
  binary::Writer w;
  w.i32(static_cast<std::int32_t>(kNiftiHeaderSize));
  w.zeros(36);  // data_type .. dim_info
  const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(v.dims[0]),
                                        static_cast<std::int16_t>(v.dims[1]),
                                        static_cast<std::int16_t>(v.dims[2]), 1, 1, 1, 1};
  for (auto d : dim) w.i16(d);
  w.zeros(12);  // intent_p1..p3
  w.i16(0);     // intent_code
  w.i16(static_cast<std::int16_t>(NiftiType::float32));
  w.i16(32);
  w.i16(0);  // slice_start
  const std::array<float, 8> pixdim{1.0f, static_cast<float>(v.spacing[0]),
                                    static_cast<float>(v.spacing[1]),
                                    static_cast<float>(v.spacing[2]), 0, 0, 0, 0};
  for (float p : pixdim) w.f32(p);
  w.f32(static_cast<float>(kNiftiDataOffset));
  w.f32(1.0f);  // scl_slope
  w.f32(0.0f);  // scl_inter
  w.i16(0);     // slice_end
  w.zeros(1);   // slice_code
  w.bytes("\x02", 1);  // xyzt_units: mm
  w.zeros(148 - w.size());
  std::array<char, 80> descrip{};
  const std::string d = "svox units=" + std::string(to_string(v.units));
  std::memcpy(descrip.data(), d.data(), std::min(d.size(), descrip.size() - 1));
  w.bytes(descrip.data(), descrip.size());
  w.zeros(344 - w.size());
  w.bytes(kNiftiMagic.data(), kNiftiMagic.size());
  w.zeros(kNiftiDataOffset - kNiftiHeaderSize);  // empty extension block
  w.f32s(v.data);
  return std::move(w.buffer());
}

inline Volume decode_volume(std::span<const std::uint8_t> bytes) {
  if (detail::has_prefix(bytes, 0, kVolumeMagic)) return detail::decode_internal_volume(bytes);
  if (detail::has_prefix(bytes, 344, kNiftiMagic)) return detail::decode_nifti(bytes);
  throw Error("volume_io", "unrecognized format at byte offset 0");
}

inline Volume read_volume(const std::filesystem::path& path) {
  const auto bytes = binary::read_file(path, "volume_io");
  try {
    return decode_volume(bytes);
  } catch (const Error& e) {
    throw Error(e.module(), path.string() + ": " + e.what());
  }
}

inline bool is_nifti_path(const std::filesystem::path& path) { return path.extension() == ".nii"; }

/// Writes the internal format, or NIfTI-1 float32 when the path ends in .nii.
inline void write_volume(const Volume& v, const std::filesystem::path& path) {
  v.validate();
  const auto bytes = is_nifti_path(path) ? encode_nifti(v) : detail::encode_internal_volume(v);
  binary::write_file(path, bytes, "volume_io");
}

inline Mask read_mask(const std::filesystem::path& path) { return mask_from_volume(read_volume(path)); }

inline void write_mask(const Mask& m, const std::filesystem::path& path, Spacing spacing = {1.0, 1.0, 1.0}) {
  write_volume(volume_from_mask(m, spacing), path);
}

}  // namespace svox
