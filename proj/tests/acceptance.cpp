// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dml/dataset.hpp"
#include "dml/eval.hpp"
#include "dml/folds.hpp"
#include "dml/gradcheck.hpp"
#include "dml/grid.hpp"
#include "dml/losses.hpp"
#include "dml/report.hpp"
#include "dml/serialize.hpp"
#include "dml/significance.hpp"
#include "dml/trainer.hpp"

namespace {

using namespace dml;
using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kMasterSeed = 20240601;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

bool same_bits(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

bool same_bits(const Vec& a, const Vec& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

bool same_bits(const EncoderParams& a, const EncoderParams& b) {
  return same_bits(a.embedding_table, b.embedding_table) && same_bits(a.projection, b.projection) &&
         same_bits(a.projection_bias, b.projection_bias) && same_bits(a.classifier, b.classifier) &&
         same_bits(a.classifier_bias, b.classifier_bias);
}

// Models trained by the criteria below, kept for the blended-inference check.
struct Run {
  std::string name;
  TrainedModel model;
  Dataset test;
};
std::vector<Run> g_runs;

LossConfig variant(LossKind kind, double beta) {
  LossConfig c;
  c.kind = kind;
  c.beta = beta;
  c.st_proxies = 2;
  return c;
}

const std::vector<LossKind> kDmlKinds{LossKind::Triplet,  LossKind::NPairs,     LossKind::SupCon,
                                      LossKind::ProxyNCA, LossKind::SoftTriple, LossKind::ProxyAnchor};

// 1
Outcome gradient_oracle() {
  Outcome o;
  const GradcheckReport r = run_gradcheck();
  std::set<std::string> losses;
  std::set<std::string> proxy_losses;
  int instances = 0;
  for (const auto& row : r.rows) {
    if (!row.ok()) o.require(false, row.loss + "/" + row.wrt + " " + std::to_string(row.failures) + " failures");
    if (row.wrt == "embeddings" || row.wrt == "logits") losses.insert(row.loss);
    if (row.wrt == "proxies") proxy_losses.insert(row.loss);
    instances += row.instances;
  }
  o.require(losses.size() == 7, "expected 7 losses checked, got " + std::to_string(losses.size()));
  o.require(proxy_losses.size() == 3, "expected 3 proxy gradients checked");
  o.require(r.seconds < 30, "runtime " + fmt("%.2f", r.seconds) + " s");
  if (o.pass) o.detail = std::to_string(instances) + " instances, " + fmt("%.2f", r.seconds) + " s";
  return o;
}

// 2
Outcome combined_endpoints() {
  Outcome o;
  SynthSpec spec;
  spec.examples = 300;
  const Dataset data = synth_dataset(spec);
  FoldOptions fo;
  fo.n_folds = 1;
  fo.shot_size = std::nullopt;
  const FoldPlan plan = make_fold_plan(data, kMasterSeed, fo);
  const Dataset train_set = data.subset(plan.folds[0].train);
  const Dataset test_set = data.subset(plan.folds[0].test);

  TrainConfig base;
  base.epochs = 4;
  base.batch_size = 32;
  base.seed = kMasterSeed;
  base.loss = variant(LossKind::CCE, 1.0);
  const TrainedModel cce = train(train_set, base);
  g_runs.push_back({"cce", cce, test_set});

  double worst = 0;
  for (LossKind kind : kDmlKinds) {
    const std::string name(to_string(kind));
    TrainConfig one = base;
    one.loss = variant(kind, 1.0);
    const TrainedModel m1 = train(train_set, one);
    bool same_trace = m1.trace.size() == cce.trace.size();
    for (std::size_t i = 0; same_trace && i < m1.trace.size(); ++i) {
      same_trace = std::memcmp(&m1.trace[i].loss, &cce.trace[i].loss, sizeof(double)) == 0;
    }
    o.require(same_bits(m1.encoder, cce.encoder) && same_trace, name + " beta=1 differs from CCE");
    g_runs.push_back({name + " beta=1", m1, test_set});

    TrainConfig zero = base;
    zero.loss = variant(kind, 0.0);
    TrainConfig pure = base;
    pure.loss = variant(kind, 0.0);
    pure.loss.dml_only = true;
    const TrainedModel m0 = train(train_set, zero);
    const TrainedModel md = train(train_set, pure);
    if (m0.trace.size() != md.trace.size()) {
      o.require(false, name + " trace lengths differ");
      continue;
    }
    double drift = 0;
    for (std::size_t i = 0; i < m0.trace.size(); ++i) {
      drift = std::max(drift, std::abs(m0.trace[i].loss - md.trace[i].loss));
    }
    worst = std::max(worst, drift);
    o.require(drift <= 1e-12, name + " beta=0 trace drift " + fmt("%.3e", drift));
    g_runs.push_back({name + " beta=0", m0, test_set});
  }
  if (o.pass) o.detail = "6 losses, beta=1 bit-identical, beta=0 max drift " + fmt("%.1e", worst);
  return o;
}

// 4
Outcome hand_values() {
  Outcome o;
  auto near = [&](double got, double want, double tol, const std::string& what) {
    o.require(std::abs(got - want) <= tol, what + " = " + fmt("%.12g", got));
  };

  EmbeddingBatch t;
  t.embeddings = Mat{{0, 0}, {1, 0}, {0, 2}};
  t.labels = {0, 0, 1};
  const std::vector<TripletSpec> ts{{0, 1, 2, 1.0}};
  near(triplet_loss(t, ts).value, 0.0, 0, "triplet (1-4+1)");
  t.embeddings = Mat{{0, 0}, {0, 1}, {1, 0}};
  near(triplet_loss(t, ts).value, 1.0, 1e-15, "triplet (1-1+1)");

  EmbeddingBatch n;
  n.embeddings = Mat{{0, 0}};
  n.labels = {0};
  ProxyBank bank{Mat{{0, 0}, {3, 4}}, 2, 1};
  near(proxynca_loss(n, bank, 1.0, false).value, -5.0, 1e-9, "proxynca scale 1");
  near(proxynca_loss(n, bank, 2.0, false).value, -10.0, 1e-9, "proxynca scale 2");

  EmbeddingBatch s;
  s.embeddings = Mat{{1, 0}, {0.6, 0.8}};
  s.labels = {1, 1};
  near(supcon_loss(s, 0.1).value, 0.0, 1e-12, "supcon two same-class");

  EmbeddingBatch st;
  st.embeddings = Mat{{1, 0}};
  st.labels = {0};
  ProxyBank w{Mat{{1, 0}, {0, 1}}, 2, 1};
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  near(softtriple_loss(st, w, {1.0, 0.1, 0.0}).value, expected, 1e-6, "softtriple K=1");
  near(expected, 0.313262, 1e-6, "softtriple oracle");

  EmbeddingBatch pa;
  pa.embeddings = Mat{{0.6, 0.8}};
  pa.labels = {0};
  ProxyBank single{Mat{{0.6, 0.8}}, 1, 1};
  const double v = proxyanchor_loss(pa, single, 32, 0.1).value;
  o.require(v >= 0 && v < 1e-10, "proxyanchor s=1 = " + fmt("%.3e", v));
  near(v, std::log1p(std::exp(-28.8)), 1e-20, "proxyanchor against log(1+e^-28.8)");

  if (o.pass) o.detail = "triplet 0/1, proxynca -5/-10, supcon 0, softtriple " + fmt("%.6f", expected) +
                         ", proxyanchor " + fmt("%.2e", v);
  return o;
}

struct Instance {
  EmbeddingBatch batch;
  ProxyBank bank1;
  ProxyBank bank2;
  Mat probs;
};

Instance random_instance(Rng& rng) {
  Instance in;
  in.batch.labels = {0, 0, 1, 1, 2, 2};
  rng.shuffle(in.batch.labels);
  in.batch.embeddings = Mat(6, 8);
  for (Eigen::Index i = 0; i < in.batch.embeddings.size(); ++i) in.batch.embeddings.data()[i] = rng.normal();
  in.bank1 = init_proxies(3, 1, 8, rng);
  in.bank2 = init_proxies(3, 2, 8, rng);
  Mat logits(6, 3);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = 2 * rng.normal();
  in.probs = softmax_rows(logits);
  return in;
}

std::vector<double> batch_values(const Instance& in, const std::vector<TripletSpec>& ts,
                                 const std::vector<PairSpec>& ps) {
  const auto& b = in.batch;
  return {cce_loss(in.probs, b.labels).value,
          triplet_loss(b, ts).value,
          npairs_loss(b, ps).value,
          supcon_loss(b, 0.1).value,
          proxynca_loss(b, in.bank1, 3.0).value,
          softtriple_loss(b, in.bank2, {4.0, 0.1, 0.1}).value,
          proxyanchor_loss(b, in.bank1, 32, 0.1).value};
}

// 5
Outcome invariance() {
  Outcome o;
  const char* names[] = {"cce", "triplet", "npairs", "supcon", "proxynca", "softtriple", "proxyanchor"};
  Rng rng(kMasterSeed);
  double drift = 0;
  double lowest = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Instance in = random_instance(rng);
    Rng mining(static_cast<std::uint64_t>(trial));
    const auto ts = mine_triplets(in.batch.labels, 1.0, 512, mining);
    const auto ps = mine_pairs(in.batch.labels, 512, mining);
    const std::vector<double> before = batch_values(in, ts, ps);

    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<int> where(6);
    Instance moved = in;
    for (int i = 0; i < 6; ++i) {
      moved.batch.embeddings.row(i) = in.batch.embeddings.row(perm[i]);
      moved.batch.labels[static_cast<std::size_t>(i)] = in.batch.labels[static_cast<std::size_t>(perm[i])];
      moved.probs.row(i) = in.probs.row(perm[i]);
      where[static_cast<std::size_t>(perm[i])] = i;
    }
    auto at = [&](int idx) { return where[static_cast<std::size_t>(idx)]; };
    std::vector<TripletSpec> ts2;
    for (const auto& t : ts) ts2.push_back({at(t.anchor), at(t.positive), at(t.negative), t.margin});
    std::vector<PairSpec> ps2;
    for (const auto& p : ps) ps2.push_back({at(p.anchor), at(p.positive)});
    const std::vector<double> after = batch_values(moved, ts2, ps2);

    for (std::size_t k = 0; k < before.size(); ++k) {
      const double d = std::abs(before[k] - after[k]);
      drift = std::max(drift, d);
      if (d >= 1e-10) o.require(false, std::string(names[k]) + " permutation drift " + fmt("%.3e", d));
      if (k != 4) {
        lowest = std::min(lowest, before[k]);
        if (before[k] < -1e-12) o.require(false, std::string(names[k]) + " negative " + fmt("%.3e", before[k]));
      }
    }
  }

  double sum_err = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Vec logits(1 + static_cast<Eigen::Index>(rng.uniform_index(12)));
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits(i) = (2 * rng.uniform() - 1) * 1e4;
    sum_err = std::max(sum_err, std::abs(softmax(logits).sum() - 1.0));
  }
  o.require(sum_err <= 1e-12, "softmax sum error " + fmt("%.3e", sum_err));

  const Dataset data = synth_dataset({});
  const std::string a = to_json(make_fold_plan(data, kMasterSeed, {})).dump(2);
  const std::string b = to_json(make_fold_plan(data, kMasterSeed, {})).dump(2);
  o.require(a == b, "fold plan JSON differs across runs");

  if (o.pass) {
    o.detail = "max permutation drift " + fmt("%.1e", drift) + ", min value " + fmt("%.1e", lowest) +
               ", softmax sum error " + fmt("%.1e", sum_err) + ", fold plan JSON identical";
  }
  return o;
}

// 6
Outcome fewshot_trend() {
  Outcome o;
  const auto t0 = Clock::now();
  SynthSpec spec;
  spec.classes = 2;
  spec.examples = 2000;
  spec.noise = 0.35;
  const Dataset data = synth_dataset(spec);
  FoldOptions fo;
  fo.n_folds = 40;
  fo.shot_size = 20;
  const FoldPlan plan = make_fold_plan(data, kMasterSeed, fo);

  GridSpec pa;
  pa.kind = LossKind::ProxyAnchor;
  pa.pa_alphas = {32};
  pa.pa_deltas = {0.1};
  pa.betas = {0.5};
  GridOptions options;
  options.blend = {InferenceMode::Blended, 0.5};
  options.workers = 4;
  const ExperimentReport report = run_grid(data, plan, {pa}, options);
  const double secs = seconds_since(t0);

  const ReportRow* cce = nullptr;
  const ReportRow* dense = nullptr;
  const ReportRow* inf = nullptr;
  for (const auto& row : report.rows) {
    if (row.label == "CCE") cce = &row;
    if (row.label == "CCE + ProxyAnchor") dense = &row;
    if (row.label == "CCE + ProxyAnchor + inf") inf = &row;
  }
  if (!cce || !dense || !inf) {
    o.require(false, "report rows missing");
    return o;
  }
  o.require(dense->mean >= cce->mean, "CCE+ProxyAnchor " + fmt("%.4f", dense->mean) + " < CCE " +
                                          fmt("%.4f", cce->mean));
  o.require(inf->mean >= dense->mean, "+inf " + fmt("%.4f", inf->mean) + " < dense " + fmt("%.4f", dense->mean));
  o.require(secs < 300, "runtime " + fmt("%.1f", secs) + " s");
  o.detail = (o.pass ? std::string() : o.detail + " | ") + "CCE " + fmt("%.4f", cce->mean) + ", +ProxyAnchor " +
             fmt("%.4f", dense->mean) + ", +inf " + fmt("%.4f", inf->mean) + ", " + fmt("%.1f", secs) + " s";

  // Keep the same models for the blended-inference check.
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    TrainConfig config = options.train;
    config.loss = variant(LossKind::ProxyAnchor, 0.5);
    config.loss.pa_alpha = 32;
    config.loss.pa_delta = 0.1;
    config.seed = fold_training_seed(plan.master_seed, f);
    g_runs.push_back({"fewshot fold " + std::to_string(f), train(data.subset(plan.folds[f].fewshot), config),
                      data.subset(plan.folds[f].test)});
  }
  return o;
}

// 8
Outcome sanity_convergence() {
  Outcome o;
  SynthSpec spec;
  spec.noise = 0;
  const Dataset data = synth_dataset(spec);
  FoldOptions fo;
  fo.n_folds = 1;
  fo.shot_size = std::nullopt;
  const FoldPlan plan = make_fold_plan(data, kMasterSeed, fo);
  const Dataset train_set = data.subset(plan.folds[0].train);
  const Dataset test_set = data.subset(plan.folds[0].test);
  TrainConfig config;
  config.seed = kMasterSeed;
  config.epochs = 64;
  const auto t0 = Clock::now();
  const TrainedModel model = train(train_set, config);
  const double secs = seconds_since(t0);
  const double f1 = evaluate(model, test_set, {}).macro_f1;
  o.require(f1 >= 0.95, "macro-F1 " + fmt("%.4f", f1));
  o.require(secs < 2.0, "training took " + fmt("%.2f", secs) + " s");
  o.detail = (o.pass ? std::string() : o.detail + " | ") + "macro-F1 " + fmt("%.4f", f1) + " after " +
             std::to_string(config.epochs) + " epochs in " + fmt("%.2f", secs) + " s";
  g_runs.push_back({"sanity", model, test_set});
  return o;
}

// 3; runs after 2, 6 and 8 have collected their models.
Outcome blended_endpoint() {
  Outcome o;
  long points = 0;
  int models = 0;
  for (const auto& run : g_runs) {
    if (!run.model.proxies) continue;
    const InferenceMode mode =
        run.model.proxies->proxies_per_class == 1 ? InferenceMode::Blended : InferenceMode::BlendedMaxOverK;
    const auto dense = predict_all(run.model, run.test, {InferenceMode::DenseOnly, 1.0});
    const auto blended = predict_all(run.model, run.test, {mode, 1.0});
    ++models;
    points += static_cast<long>(dense.size());
    if (dense != blended) o.require(false, run.name + " predictions differ at beta_inf=1");
  }
  o.require(models > 0, "no proxy models collected");
  if (o.pass) o.detail = std::to_string(models) + " proxy models, " + std::to_string(points) + " test points";
  return o;
}

// 7
Outcome grid_counts() {
  Outcome o;
  const std::vector<std::pair<LossKind, std::size_t>> want{
      {LossKind::Triplet, 25},  {LossKind::SupCon, 25},      {LossKind::NPairs, 5},
      {LossKind::ProxyNCA, 55}, {LossKind::SoftTriple, 4200}, {LossKind::ProxyAnchor, 120}};
  std::string counts;
  for (const auto& [kind, n] : want) {
    const std::size_t got = paper_grid(kind).enumerate().size();
    o.require(got == n, std::string(to_string(kind)) + " enumerates " + std::to_string(got));
    counts += (counts.empty() ? "" : ", ") + std::string(to_string(kind)) + " " + std::to_string(got);
  }
  if (o.pass) o.detail = counts;
  return o;
}

// 9
Outcome significance_rendering() {
  Outcome o;
  std::vector<double> a(40);
  Rng rng(kMasterSeed);
  for (double& x : a) x = rng.uniform();
  o.require(paired_significance(a, a) == 1.0, "identical scores give p != 1");

  ExperimentReport report;
  report.master_seed = kMasterSeed;
  report.n_folds = 40;
  const std::vector<std::pair<std::string, std::optional<double>>> rows{
      {"CCE", std::nullopt}, {"CCE + Triplet", 0.2}, {"CCE + SupCon", 0.01},
      {"CCE + ProxyAnchor", 0.0499}, {"CCE + ProxyNCA", 0.05}};
  for (const auto& [label, p] : rows) {
    ReportRow row;
    row.label = label;
    row.dataset = "MR";
    row.shots = "20";
    row.mean = 0.675;
    row.stddev = 0.0487;
    row.p_value = p;
    row.starred = p && *p < 0.05;
    row.fold_scores = {0.675};
    report.rows.push_back(row);
  }
  o.require(format_cell(0.675, 0.0487, true) == "67.50±4.87*", "cell format '" + format_cell(0.675, 0.0487, true) + "'");
  const std::string table = render_table(std::span(&report, 1));
  std::istringstream in(table);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  int starred = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& [label, p] = rows[i];
    const std::string line = i + 1 < lines.size() ? lines[i + 1] : "";
    o.require(line.rfind(label, 0) == 0, "row " + std::to_string(i) + " is not " + label);
    const bool star = line.find("67.50±4.87*") != std::string::npos;
    o.require(star || line.find("67.50±4.87") != std::string::npos, label + " cell missing");
    if (star) ++starred;
    o.require(star == (p && *p < 0.05), label + (star ? " starred" : " not starred"));
  }
  o.require(starred == 2, "expected 2 starred cells, found " + std::to_string(starred));
  if (o.pass) o.detail = "p(a,a)=1, 2 of 5 cells starred as '67.50±4.87*'";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::pair<const char*, std::function<Outcome()>>>> criteria{
      {1, {"gradient oracle suite", gradient_oracle}},
      {2, {"combined-loss endpoints", combined_endpoints}},
      {4, {"hand-computed loss values", hand_values}},
      {5, {"invariance suite", invariance}},
      {6, {"few-shot directional trend", fewshot_trend}},
      {7, {"grid enumeration", grid_counts}},
      {8, {"sanity convergence", sanity_convergence}},
      {3, {"blended inference endpoint", blended_endpoint}},
      {9, {"significance and starring", significance_rendering}},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  std::vector<std::string> lines(10);
  int failures = 0;
  for (const auto& [id, entry] : criteria) {
    if (!only.empty() && !only.contains(id)) continue;
    Outcome o;
    try {
      o = entry.second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    if (!o.pass) ++failures;
    lines[static_cast<std::size_t>(id)] =
        std::string(o.pass ? "PASS" : "FAIL") + "  [" + std::to_string(id) + "] " + entry.first + ": " + o.detail;
  }
  for (const auto& l : lines) {
    if (!l.empty()) std::printf("%s\n", l.c_str());
  }
  return failures == 0 ? 0 : 1;
}
