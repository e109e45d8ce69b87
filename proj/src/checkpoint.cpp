#include "dml/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace dml {

namespace {

template <typename UInt>
void put_le(std::ostream& out, UInt v) {
  std::array<char, sizeof(UInt)> bytes{};
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename UInt>
UInt get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(UInt)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw ParseError(std::string(what) + ": truncated file");
  }
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(bytes[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& out, double x) { put_le(out, std::bit_cast<std::uint64_t>(x)); }

double get_f64(std::istream& in, const char* what) {
  return std::bit_cast<double>(get_le<std::uint64_t>(in, what));
}

template <typename Block>
void put_block(std::ostream& out, const Block& block) {
  // Mat is row-major, so storage order is the on-disk order.
  for (Eigen::Index i = 0; i < block.size(); ++i) put_f64(out, block.data()[i]);
}

template <typename Block>
void get_block(std::istream& in, Block& block, const char* what) {
  for (Eigen::Index i = 0; i < block.size(); ++i) block.data()[i] = get_f64(in, what);
}

void expect_magic(std::istream& in, const char (&magic)[5], const char* what) {
  char got[4] = {};
  if (!in.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
    throw ParseError(std::string(what) + ": bad magic, expected \"" + magic + "\"");
  }
}

std::uint32_t checked_u32(Eigen::Index v, const char* what) {
  if (v < 0 || v > static_cast<Eigen::Index>(UINT32_MAX)) {
    throw DimensionError(std::string(what) + ": dimension does not fit in 32 bits");
  }
  return static_cast<std::uint32_t>(v);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

}  // namespace

void write_proxy_bank(std::ostream& out, const ProxyBank& bank) {
  bank.validate();
  out.write("PXB1", 4);
  put_le(out, checked_u32(bank.classes, "PXB1"));
  put_le(out, checked_u32(bank.proxies_per_class, "PXB1"));
  put_le(out, checked_u32(bank.dim(), "PXB1"));
  put_block(out, bank.matrix);
  if (!out) throw IoError("PXB1: write failed");
}

ProxyBank read_proxy_bank(std::istream& in) {
  expect_magic(in, "PXB1", "PXB1");
  ProxyBank bank;
  const auto classes = get_le<std::uint32_t>(in, "PXB1");
  const auto per_class = get_le<std::uint32_t>(in, "PXB1");
  const auto dim = get_le<std::uint32_t>(in, "PXB1");
  if (classes == 0 || per_class == 0 || dim == 0) throw ParseError("PXB1: zero dimension");
  bank.classes = static_cast<int>(classes);
  bank.proxies_per_class = static_cast<int>(per_class);
  bank.matrix.resize(static_cast<Eigen::Index>(classes) * per_class, dim);
  get_block(in, bank.matrix, "PXB1");
  bank.validate();
  return bank;
}

void save_proxy_bank(const std::filesystem::path& path, const ProxyBank& bank) {
  auto out = open_out(path);
  write_proxy_bank(out, bank);
}

ProxyBank load_proxy_bank(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_proxy_bank(in);
}

void write_encoder(std::ostream& out, const EncoderParams& params) {
  params.validate();
  const auto d = params.dims();
  out.write("ENC1", 4);
  put_le(out, checked_u32(d.vocab, "ENC1"));
  put_le(out, checked_u32(d.embed, "ENC1"));
  put_le(out, checked_u32(d.dim, "ENC1"));
  put_le(out, checked_u32(d.classes, "ENC1"));
  put_block(out, params.embedding_table);
  put_block(out, params.projection);
  put_block(out, params.projection_bias);
  put_block(out, params.classifier);
  put_block(out, params.classifier_bias);
  if (!out) throw IoError("ENC1: write failed");
}

EncoderParams read_encoder(std::istream& in) {
  expect_magic(in, "ENC1", "ENC1");
  EncoderDims d;
  d.vocab = static_cast<int>(get_le<std::uint32_t>(in, "ENC1"));
  d.embed = static_cast<int>(get_le<std::uint32_t>(in, "ENC1"));
  d.dim = static_cast<int>(get_le<std::uint32_t>(in, "ENC1"));
  d.classes = static_cast<int>(get_le<std::uint32_t>(in, "ENC1"));
  if (d.vocab < 1 || d.embed < 1 || d.dim < 1 || d.classes < 1) throw ParseError("ENC1: zero dimension");
  auto params = EncoderParams::zeros(d);
  get_block(in, params.embedding_table, "ENC1");
  get_block(in, params.projection, "ENC1");
  get_block(in, params.projection_bias, "ENC1");
  get_block(in, params.classifier, "ENC1");
  get_block(in, params.classifier_bias, "ENC1");
  params.validate();
  return params;
}

void save_encoder(const std::filesystem::path& path, const EncoderParams& params) {
  auto out = open_out(path);
  write_encoder(out, params);
}

EncoderParams load_encoder(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_encoder(in);
}

}  // namespace dml
