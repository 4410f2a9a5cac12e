#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "svox/volume_io.hpp"

using namespace svox;
namespace fs = std::filesystem;

namespace {

fs::path fixture(const std::string& name) { return fs::path(SVOX_FIXTURE_DIR) / name; }

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "svox_test_volume_io";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) { return binary::read_file(p, "test"); }

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(InternalFormat, RawFileOfZeroToSeven) {
  Volume v({2, 2, 2}, {1, 1, 1});
  for (int i = 0; i < 8; ++i) v.data[i] = static_cast<float>(i);
  const auto p = temp_path("ramp.svox");
  write_volume(v, p);
  const Volume r = read_volume(p);
  EXPECT_EQ(r.dims, (Dims{2, 2, 2}));
  EXPECT_EQ(r.data, (std::vector<float>{0, 1, 2, 3, 4, 5, 6, 7}));
  // header layout: 16-byte magic then LE u32 length
  const auto bytes = file_bytes(p);
  ASSERT_GE(bytes.size(), 20u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "SVOXVOL1");
  for (int i = 8; i < 16; ++i) EXPECT_EQ(bytes[i], 0);
  const std::uint32_t len = bytes[16] | bytes[17] << 8 | bytes[18] << 16 | bytes[19] << 24;
  EXPECT_EQ(bytes.size(), 20u + len + 8 * 4);
}

TEST(InternalFormat, RoundTripIsBitExact) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(-1e6f, 1e6f);
  for (int trial = 0; trial < 10; ++trial) {
    Volume v({3, 3, 3}, {1.56, 1.56, 1.56}, trial % 2 ? Units::hounsfield : Units::arbitrary_mr);
    for (auto& x : v.data) x = u(rng);
    v.data[0] = -0.0f;
    v.data[1] = std::numeric_limits<float>::denorm_min();
    v.orientation = kAllOrientations[trial % 3];
    const auto p = temp_path("rt.svox");
    write_volume(v, p);
    const Volume r = read_volume(p);
    ASSERT_EQ(r.size(), v.size());
    EXPECT_EQ(std::memcmp(r.data.data(), v.data.data(), v.size() * 4), 0);
    EXPECT_EQ(r.spacing, v.spacing);
    EXPECT_EQ(r.spacing[0], 1.56);
    EXPECT_EQ(r.units, v.units);
    EXPECT_EQ(r.orientation, v.orientation);
    // and the re-encoded file is byte-identical
    const auto p2 = temp_path("rt2.svox");
    write_volume(r, p2);
    EXPECT_EQ(file_bytes(p), file_bytes(p2));
  }
}

TEST(InternalFormat, UnwritablePathFails) {
  Volume v({2, 2, 2}, {1, 1, 1});
  EXPECT_THROW(write_volume(v, "/nonexistent-dir/x/y.svox"), Error);
  const auto ro = temp_path("readonly");
  fs::create_directories(ro);
  fs::permissions(ro, fs::perms::owner_read | fs::perms::owner_exec);
  const bool can_write = std::ofstream(ro / "probe").good();  // root ignores permissions
  fs::remove(ro / "probe");
  if (!can_write) {
    EXPECT_THROW(write_volume(v, ro / "v.svox"), Error);
  }
  fs::permissions(ro, fs::perms::owner_all);
}

TEST(InternalFormat, TruncatedPayloadReportsOffset) {
  Volume v({2, 2, 2}, {1, 1, 1});
  const auto p = temp_path("trunc.svox");
  write_volume(v, p);
  auto bytes = file_bytes(p);
  bytes.resize(bytes.size() - 3);
  binary::write_file(p, bytes, "test");
  const std::string msg = error_of([&] { read_volume(p); });
  EXPECT_NE(msg.find("truncated voxel payload"), std::string::npos) << msg;
  EXPECT_NE(msg.find("byte offset"), std::string::npos) << msg;
}

TEST(InternalFormat, MalformedHeaderReportsOffset) {
  binary::Writer w;
  w.bytes(kVolumeMagic.data(), kVolumeMagic.size());
  const std::string junk = "{not json";
  w.u32(static_cast<std::uint32_t>(junk.size()));
  w.bytes(junk.data(), junk.size());
  const std::string msg = error_of([&] { decode_volume(w.buffer()); });
  EXPECT_NE(msg.find("malformed header"), std::string::npos) << msg;
  EXPECT_NE(msg.find("byte offset 20"), std::string::npos) << msg;
}

TEST(Format, UnrecognizedMagicIsRejected) {
  const std::vector<std::uint8_t> bytes(400, 0x41);
  const std::string msg = error_of([&] { decode_volume(bytes); });
  EXPECT_NE(msg.find("unrecognized format"), std::string::npos) << msg;
}

TEST(Nifti, Int16SlopeAndInterceptGolden) {
  const Volume v = read_volume(fixture("int16_slope2_inter1.nii"));
  EXPECT_EQ(v.dims, (Dims{3, 2, 2}));
  EXPECT_FLOAT_EQ(static_cast<float>(v.spacing[0]), 1.56f);
  std::ifstream in(fixture("int16_slope2_inter1.expected"));
  std::vector<float> expected;
  for (float x; in >> x;) expected.push_back(x);
  ASSERT_EQ(expected.size(), 12u);
  EXPECT_EQ(v.data, expected);
  for (int s = -6; s < 6; ++s) EXPECT_EQ(v.data[s + 6], 2.0f * s + 1.0f);
}

TEST(Nifti, Uint8WithZeroSlopeTreatsSlopeAsOne) {
  const Volume v = read_volume(fixture("uint8_slope0.nii"));
  EXPECT_EQ(v.data, (std::vector<float>{0, 1, 2, 3, 4, 5, 250, 251, 252, 253, 254, 255}));
  EXPECT_EQ(v.spacing, (Spacing{1.0, 2.0, 3.0}));
}

TEST(Nifti, UnsupportedDatatypeReportsOffset) {
  const std::string msg = error_of([&] { read_volume(fixture("float64_unsupported.nii")); });
  EXPECT_NE(msg.find("unsupported data type code 64"), std::string::npos) << msg;
  EXPECT_NE(msg.find("byte offset 70"), std::string::npos) << msg;
}

TEST(Nifti, RequiresThreeDimensions) {
  auto bytes = file_bytes(fixture("int16_slope2_inter1.nii"));
  bytes[40] = 4;
  const std::string msg = error_of([&] { decode_volume(bytes); });
  EXPECT_NE(msg.find("dim[0] must be 3"), std::string::npos) << msg;
}

TEST(Nifti, TruncatedPayload) {
  auto bytes = file_bytes(fixture("int16_slope2_inter1.nii"));
  bytes.resize(bytes.size() - 1);
  const std::string msg = error_of([&] { decode_volume(bytes); });
  EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
  EXPECT_NE(msg.find("byte offset 352"), std::string::npos) << msg;
}

TEST(Nifti, Float32WriteReadRoundTrip) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-3000.f, 3000.f);
  Volume v({4, 3, 5}, {1.5, 1.5, 2.0}, Units::hounsfield);
  for (auto& x : v.data) x = u(rng);
  const auto p = temp_path("rt.nii");
  write_volume(v, p);
  const auto bytes = file_bytes(p);
  EXPECT_EQ(bytes.size(), 352u + 4 * v.size());
  EXPECT_EQ(std::string(bytes.begin() + 344, bytes.begin() + 347), "n+1");
  const Volume r = read_volume(p);
  EXPECT_EQ(r.data, v.data);
  EXPECT_EQ(r.dims, v.dims);
  EXPECT_EQ(r.spacing, v.spacing);
  EXPECT_EQ(r.units, Units::hounsfield);
}
