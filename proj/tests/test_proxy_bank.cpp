#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <sstream>

#include "dml/checkpoint.hpp"
#include "dml/proxy_bank.hpp"

using namespace dml;

namespace {

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& s, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

bool bit_equal(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST(InitProxies, ShapeAndUnitRows) {
  Rng rng(1);
  const ProxyBank b = init_proxies(2, 1, 4, rng);
  EXPECT_EQ(b.matrix.rows(), 2);
  EXPECT_EQ(b.matrix.cols(), 4);
  for (Eigen::Index r = 0; r < b.rows(); ++r) EXPECT_NEAR(b.matrix.row(r).norm(), 1.0, 1e-12);
  Rng rng2(1);
  EXPECT_TRUE(init_proxies(3, 5, 8, rng2).rows() == 15);
  EXPECT_THROW(init_proxies(0, 1, 4, rng), ConfigError);
  EXPECT_THROW(init_proxies(2, 1, 0, rng), ConfigError);
}

TEST(InitProxies, DeterministicGivenSeed) {
  Rng a(77), b(77);
  EXPECT_TRUE(bit_equal(init_proxies(3, 2, 6, a).matrix, init_proxies(3, 2, 6, b).matrix));
}

TEST(ProxiesOf, LayoutIsClassMajor) {
  Rng rng(2);
  const ProxyBank one = init_proxies(4, 1, 3, rng);
  EXPECT_EQ(proxies_of(one, 2), Mat(one.matrix.row(2)));

  const ProxyBank bank = init_proxies(3, 3, 5, rng);
  EXPECT_EQ(proxies_of(bank, 2), Mat(bank.matrix.bottomRows(3)));
  Mat rebuilt(9, 5);
  for (int c = 0; c < 3; ++c) rebuilt.middleRows(3 * c, 3) = proxies_of(bank, c);
  EXPECT_EQ(rebuilt, bank.matrix);
  EXPECT_THROW(proxies_of(bank, 3), LabelError);
  EXPECT_THROW(proxies_of(bank, -1), LabelError);
}

TEST(PresentClasses, DistinctLabels) {
  EXPECT_EQ(present_classes(std::vector<int>{0, 0, 1}), (std::set<int>{0, 1}));
  EXPECT_TRUE(present_classes(std::vector<int>{}).empty());
  EXPECT_EQ(present_classes(std::vector<int>{2, 2, 2}), (std::set<int>{2}));
}

TEST(ProxyBank, ValidateRejectsBadBanks) {
  ProxyBank b{Mat::Ones(3, 2), 2, 1};
  EXPECT_THROW(b.validate(), DimensionError);
  b.matrix = Mat::Ones(2, 2);
  b.matrix(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(b.validate(), DivergenceError);
}

TEST(ProxyCheckpoint, ByteLayout) {
  const ProxyBank b{Mat{{1.5, -2.0}, {0.25, 3.0}}, 2, 1};
  std::ostringstream out;
  write_proxy_bank(out, b);
  std::string expected = "PXB1";
  put_u32(expected, 2);
  put_u32(expected, 1);
  put_u32(expected, 2);
  for (double x : {1.5, -2.0, 0.25, 3.0}) put_f64(expected, x);
  EXPECT_EQ(out.str(), expected);
}

TEST(ProxyCheckpoint, RoundTripIsBitExact) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const ProxyBank b = init_proxies(1 + trial % 4, 1 + trial % 3, 2 + trial, rng);
    std::stringstream io;
    write_proxy_bank(io, b);
    const ProxyBank back = read_proxy_bank(io);
    EXPECT_EQ(back.classes, b.classes);
    EXPECT_EQ(back.proxies_per_class, b.proxies_per_class);
    EXPECT_TRUE(bit_equal(back.matrix, b.matrix));
  }
}

TEST(ProxyCheckpoint, RejectsCorruptInput) {
  std::istringstream bad_magic("PXB2xxxxxxxxxxxx");
  EXPECT_THROW(read_proxy_bank(bad_magic), ParseError);
  std::ostringstream out;
  write_proxy_bank(out, ProxyBank{Mat::Ones(2, 2), 2, 1});
  std::istringstream truncated(out.str().substr(0, out.str().size() - 3));
  EXPECT_THROW(read_proxy_bank(truncated), ParseError);
  EXPECT_THROW(load_proxy_bank("/nonexistent/dir/p.pxb"), IoError);
}

TEST(ProxyCheckpoint, FileRoundTrip) {
  Rng rng(6);
  const ProxyBank b = init_proxies(3, 1, 4, rng);
  const auto path = std::filesystem::temp_directory_path() / "dml_test_bank.pxb";
  save_proxy_bank(path, b);
  EXPECT_TRUE(bit_equal(load_proxy_bank(path).matrix, b.matrix));
  std::filesystem::remove(path);
}
