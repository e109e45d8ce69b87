#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dml {

struct GradcheckOptions {
  int instances = 50;           // random instances per loss
  int model_instances = 20;     // end-to-end instances per loss (0 to skip)
  std::uint64_t seed = 20240601;
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_tol = 1e-8;
  /// Gradient magnitude below which abs_tol applies instead of rel_tol.
  double tiny = 1e-6;
};

/// Outcome for one (loss, parameter) pair.
struct GradcheckRow {
  std::string loss;
  std::string wrt;   // "embeddings", "proxies", "logits" or "model"
  int instances = 0;
  int failures = 0;
  double worst_rel = 0;
  double worst_abs = 0;

  bool ok() const { return failures == 0 && instances > 0; }
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  double seconds = 0;

  bool ok() const;
};

/// Compares every analytic gradient against central finite differences on
/// seeded random instances (L=6, d=8, C=3). Loss-level checks cover the
/// gradients w.r.t. embeddings and proxies; model-level checks differentiate
/// the whole objective (logits -> z -> encoder parameters and proxies).
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace dml
