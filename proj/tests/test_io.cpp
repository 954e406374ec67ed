#include <gtest/gtest.h>

#include <random>

#include "svcm/io.hpp"

using namespace svcm;
namespace fs = std::filesystem;

namespace {
fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("svcm_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Volume random_volume(std::array<int, 3> dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> z;
  Volume v{Grid3(dims, {1.0, 2.5, 0.5}), VolDType::F32, {}};
  v.data.resize(static_cast<std::size_t>(v.grid.size()));
  for (float& f : v.data) f = z(rng);
  return v;
}
}  // namespace

TEST(Vol1, RoundTripIsBitIdentical) {
  const fs::path dir = scratch("roundtrip");
  const Volume v = random_volume({4, 4, 2}, 1);
  write_volume(dir / "a.vol", v);
  const Volume r = read_volume(dir / "a.vol");
  EXPECT_EQ(r.grid, v.grid);
  ASSERT_EQ(r.data.size(), v.data.size());
  EXPECT_EQ(std::memcmp(r.data.data(), v.data.data(), v.data.size() * 4), 0);
  EXPECT_EQ(fs::file_size(dir / "a.vol"), kVol1HeaderBytes + 32 * 4);
}

TEST(Vol1, MaskRoundTrip) {
  std::vector<std::uint8_t> f{1, 0, 1, 1, 0, 0};
  const Mask m(Grid3({3, 2, 1}), f);
  const std::string bytes = encode_volume(mask_volume(m));
  const Mask back = mask_from_volume(decode_volume(bytes));
  EXPECT_EQ(back.flags(), m.flags());
  EXPECT_EQ(bytes.size(), kVol1HeaderBytes + 6);
}

TEST(Vol1, TruncatedReportsOffset) {
  std::string bytes = encode_volume(random_volume({4, 4, 2}, 2));
  bytes.resize(bytes.size() - 5);
  try {
    decode_volume(bytes, "t.vol");
    FAIL();
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("byte offset " + std::to_string(bytes.size())), std::string::npos) << msg;
  }
}

TEST(Vol1, BadMagic) {
  std::string bytes = encode_volume(random_volume({2, 2, 1}, 3));
  bytes[0] = 'X';
  EXPECT_THROW(decode_volume(bytes), ParseError);
}

TEST(Vol1, NanRejectedWithIndex) {
  Volume v = random_volume({3, 3, 1}, 4);
  v.data[7] = std::nanf("");
  try {
    decode_volume(encode_volume(v));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("voxel index 7"), std::string::npos);
  }
}

TEST(Vol1, MismatchedSubjectsNamesBothFiles) {
  const fs::path dir = scratch("mismatch");
  write_volume(dir / "a.vol", random_volume({4, 4, 2}, 5));
  write_volume(dir / "b.vol", random_volume({4, 4, 3}, 6));
  try {
    read_subject_volumes({dir / "a.vol", dir / "b.vol"});
    FAIL();
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("a.vol"), std::string::npos);
    EXPECT_NE(msg.find("b.vol"), std::string::npos);
  }
}

TEST(Vol1, AutoMaskDropsConstantVoxels) {
  Volume a = random_volume({3, 1, 1}, 7), b = a;
  b.data[1] += 1.0f;
  b.data[2] += 1.0f;
  const Mask m = auto_mask({a, b});
  EXPECT_EQ(m.n_active(), 2);
  EXPECT_EQ(m.voxel(0), 1);
}

TEST(Csv, SeventeenDigitRoundTrip) {
  const fs::path dir = scratch("csv");
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z;
  Eigen::MatrixXd m(5, 3);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = z(rng) * 1e-3;
  write_numeric_csv(dir / "m.csv", {"a", "b", "c"}, m);
  const CsvTable t = read_numeric_csv(dir / "m.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(t.values, m);
}

TEST(Csv, CovariateErrors) {
  EXPECT_THROW(parse_numeric_csv(""), ParseError);
  EXPECT_THROW(parse_numeric_csv("a,b\n1,2\n3\n"), ParseError);
  EXPECT_THROW(parse_numeric_csv("a,b\n1,x\n"), ParseError);
  const CsvTable t = parse_numeric_csv("age, group\n1.5, 0\n\n2.5, 1\n");
  EXPECT_EQ(t.values.rows(), 2);
  EXPECT_EQ(t.header[1], "group");
}

TEST(Pgm, HeaderAndSize) {
  const fs::path dir = scratch("pgm");
  const Volume v = random_volume({5, 4, 2}, 9);
  write_pgm_slices(dir, "v", v);
  std::ifstream in(dir / "v_z1.pgm", std::ios::binary);
  std::string magic;
  int w = 0, h = 0, mx = 0;
  in >> magic >> w >> h >> mx;
  EXPECT_EQ(magic, "P5");
  EXPECT_EQ(w, 5);
  EXPECT_EQ(h, 4);
  EXPECT_EQ(mx, 255);
  EXPECT_EQ(fs::file_size(dir / "v_z1.pgm"), std::string("P5\n5 4\n255\n").size() + 20);
}
