#pragma once

#include <cstdint>
#include <set>
#include <span>

#include "dml/numeric.hpp"
#include "dml/rng.hpp"

namespace dml {

/// Learnable class proxies. Row `class * proxies_per_class + k` holds the k-th
/// proxy of `class`.
struct ProxyBank {
  Mat matrix;
  int classes = 0;
  int proxies_per_class = 0;

  int dim() const { return static_cast<int>(matrix.cols()); }
  Eigen::Index rows() const { return matrix.rows(); }
  Eigen::Index row_of(int cls, int k) const {
    return static_cast<Eigen::Index>(cls) * proxies_per_class + k;
  }

  /// Throws unless the layout invariants hold and every entry is finite.
  void validate() const;
};

/// Gaussian(0, 1/sqrt(d)) rows, each scaled to unit L2 norm.
ProxyBank init_proxies(int classes, int proxies_per_class, int dim, Rng& rng);

/// Copy of the K proxies of `cls`, in k order.
Mat proxies_of(const ProxyBank& bank, int cls);

/// Distinct labels of a batch.
std::set<int> present_classes(std::span<const int> labels);

/// Rescales every proxy to unit norm in place.
void renormalize(ProxyBank& bank);

}  // namespace dml
