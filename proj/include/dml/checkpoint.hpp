#pragma once

#include <filesystem>
#include <iosfwd>

#include "dml/encoder.hpp"
#include "dml/proxy_bank.hpp"

namespace dml {

// Little-endian binary checkpoints.
//
//   proxy bank:  "PXB1", u32 C, u32 K, u32 d, C*K*d f64 (row-major)
//   encoder:     "ENC1", u32 V, u32 d_emb, u32 d, u32 C, then f64 blocks
//                embedding_table (V x d_emb), projection (d_emb x d),
//                projection_bias (d), classifier (d x C), classifier_bias (C),
//                every matrix row-major.

void write_proxy_bank(std::ostream& out, const ProxyBank& bank);
ProxyBank read_proxy_bank(std::istream& in);
void save_proxy_bank(const std::filesystem::path& path, const ProxyBank& bank);
ProxyBank load_proxy_bank(const std::filesystem::path& path);

void write_encoder(std::ostream& out, const EncoderParams& params);
EncoderParams read_encoder(std::istream& in);
void save_encoder(const std::filesystem::path& path, const EncoderParams& params);
EncoderParams load_encoder(const std::filesystem::path& path);

}  // namespace dml
