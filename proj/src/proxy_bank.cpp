#include "dml/proxy_bank.hpp"

#include <cmath>
#include <string>

namespace dml {

void ProxyBank::validate() const {
  if (classes < 1 || proxies_per_class < 1 || matrix.cols() < 1) {
    throw ConfigError("ProxyBank: classes, proxies_per_class and dim must all be >= 1");
  }
  if (matrix.rows() != static_cast<Eigen::Index>(classes) * proxies_per_class) {
    throw DimensionError("ProxyBank: row count " + std::to_string(matrix.rows()) +
                         " != classes * proxies_per_class");
  }
  if (!all_finite(matrix)) throw DivergenceError("ProxyBank: non-finite entry");
}

ProxyBank init_proxies(int classes, int proxies_per_class, int dim, Rng& rng) {
  if (classes < 1 || proxies_per_class < 1 || dim < 1) {
    throw ConfigError("init_proxies: counts must be >= 1");
  }
  ProxyBank bank;
  bank.classes = classes;
  bank.proxies_per_class = proxies_per_class;
  bank.matrix.resize(static_cast<Eigen::Index>(classes) * proxies_per_class, dim);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
  for (Eigen::Index i = 0; i < bank.matrix.size(); ++i) bank.matrix.data()[i] = rng.normal(0, stddev);
  renormalize(bank);
  return bank;
}

Mat proxies_of(const ProxyBank& bank, int cls) {
  if (cls < 0 || cls >= bank.classes) {
    throw LabelError("proxies_of: class " + std::to_string(cls) + " out of range [0, " +
                     std::to_string(bank.classes) + ")");
  }
  return bank.matrix.middleRows(bank.row_of(cls, 0), bank.proxies_per_class);
}

std::set<int> present_classes(std::span<const int> labels) {
  return std::set<int>(labels.begin(), labels.end());
}

void renormalize(ProxyBank& bank) { bank.matrix = normalize_rows(bank.matrix); }

}  // namespace dml
