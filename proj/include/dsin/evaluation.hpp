#ifndef DSIN_EVALUATION_HPP
#define DSIN_EVALUATION_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dsin/errors.hpp"
#include "dsin/tensor.hpp"

namespace dsin {

struct ClassReport {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0, recall = 0, f1 = 0;
  double tau = 0.5;
  bool degenerate = false;  // constant label column
};

struct EvalReport {
  std::vector<ClassReport> per_class;
  double macro_f1 = 0;
  double cardinality = 0, density = 0;
  std::vector<double> correlation;  // N x N row-major
};

// cardinality = mean labels per observation; density = cardinality / N.
inline std::pair<double, double> label_stats(const Tensor& labels) {
  if (labels.rank() != 2 || labels.shape()[0] < 1)
    throw value_error("label_stats expects a non-empty M x N matrix");
  const int M = labels.shape()[0], N = labels.shape()[1];
  double total = 0;
  for (double v : labels.values()) total += v;
  const double cardinality = total / M;
  return {cardinality, cardinality / N};
}

// Pearson correlation between binary label columns; constant columns get 0
// off-diagonal by convention and are flagged by the caller via variance.
inline std::vector<double> au_correlation_matrix(const Tensor& labels) {
  if (labels.rank() != 2 || labels.shape()[0] < 2)
    throw value_error("correlation needs at least two samples");
  const int M = labels.shape()[0], N = labels.shape()[1];
  std::vector<double> mean(N, 0.0);
  const auto& v = labels.values();
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) mean[j] += v[static_cast<std::size_t>(i) * N + j];
  for (double& m : mean) m /= M;
  std::vector<double> var(N, 0.0);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      const double d = v[static_cast<std::size_t>(i) * N + j] - mean[j];
      var[j] += d * d;
    }
  std::vector<double> corr(static_cast<std::size_t>(N) * N, 0.0);
  for (int a = 0; a < N; ++a) {
    corr[static_cast<std::size_t>(a) * N + a] = 1.0;
    for (int b = a + 1; b < N; ++b) {
      double cov = 0;
      for (int i = 0; i < M; ++i)
        cov += (v[static_cast<std::size_t>(i) * N + a] - mean[a]) *
               (v[static_cast<std::size_t>(i) * N + b] - mean[b]);
      double c = 0.0;
      if (var[a] > 0 && var[b] > 0) c = cov / std::sqrt(var[a] * var[b]);
      corr[static_cast<std::size_t>(a) * N + b] = c;
      corr[static_cast<std::size_t>(b) * N + a] = c;
    }
  }
  return corr;
}

// Per-class confusion counts at thresholds tau (decision rule: score >= tau),
// precision/recall/F1 with a zero-division guard, macro-averaged F1.
inline EvalReport f1_frame(const Tensor& scores, const Tensor& labels,
                           const std::vector<double>& taus) {
  if (scores.shape() != labels.shape() || scores.rank() != 2)
    throw shape_error("f1_frame shapes disagree: " + shape_str(scores.shape()) +
                      " vs " + shape_str(labels.shape()));
  const int M = scores.shape()[0], N = scores.shape()[1];
  if (static_cast<int>(taus.size()) != N)
    throw value_error("need one threshold per class");
  EvalReport rep;
  rep.per_class.resize(N);
  double f1_sum = 0;
  for (int j = 0; j < N; ++j) {
    ClassReport& c = rep.per_class[j];
    c.tau = taus[j];
    long positives = 0;
    for (int i = 0; i < M; ++i) {
      const bool y = labels.values()[static_cast<std::size_t>(i) * N + j] > 0.5;
      const bool pred =
          scores.values()[static_cast<std::size_t>(i) * N + j] >= taus[j];
      positives += y;
      if (pred && y) ++c.tp;
      else if (pred && !y) ++c.fp;
      else if (!pred && y) ++c.fn;
      else ++c.tn;
    }
    c.degenerate = positives == 0 || positives == M;
    c.precision = c.tp + c.fp > 0
                      ? static_cast<double>(c.tp) / (c.tp + c.fp)
                      : 0.0;
    c.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn)
                               : 0.0;
    c.f1 = c.precision + c.recall > 0
               ? 2.0 * c.precision * c.recall / (c.precision + c.recall)
               : 0.0;
    f1_sum += c.f1;
  }
  rep.macro_f1 = f1_sum / N;
  if (M >= 2) rep.correlation = au_correlation_matrix(labels);
  auto [card, dens] = label_stats(labels);
  rep.cardinality = card;
  rep.density = dens;
  return rep;
}

inline std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 19; ++i) grid.push_back(0.05 * i);
  return grid;
}

// Smallest grid value maximizing validation F1, per class.
inline std::vector<double> tune_thresholds(const Tensor& scores_val,
                                           const Tensor& labels_val,
                                           const std::vector<double>& grid =
                                               default_threshold_grid()) {
  if (grid.empty()) throw value_error("threshold grid must be non-empty");
  for (double g : grid)
    if (!(g > 0.0 && g < 1.0))
      throw value_error("threshold grid values must lie in (0,1)");
  const int N = scores_val.shape()[1];
  std::vector<double> best(N, grid[0]);
  std::vector<double> best_f1(N, -1.0);
  for (double tau : grid) {
    EvalReport rep =
        f1_frame(scores_val, labels_val, std::vector<double>(N, tau));
    for (int j = 0; j < N; ++j)
      if (rep.per_class[j].f1 > best_f1[j]) {
        best_f1[j] = rep.per_class[j].f1;
        best[j] = tau;
      }
  }
  return best;
}

// --------------------------------------------------------------------------
// Report files: aligned text table, machine-readable JSON-ish payload is
// written by the CLI; here the plain tabular forms.
// --------------------------------------------------------------------------

inline void write_report_tsv(const EvalReport& rep,
                             const std::filesystem::path& path,
                             const std::string& head_name) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot write report " + path.string());
  os.precision(6);
  os << "head\tclass\ttau\ttp\tfp\tfn\ttn\tprecision\trecall\tf1\tdegenerate\n";
  for (std::size_t j = 0; j < rep.per_class.size(); ++j) {
    const ClassReport& c = rep.per_class[j];
    os << head_name << '\t' << j << '\t' << c.tau << '\t' << c.tp << '\t'
       << c.fp << '\t' << c.fn << '\t' << c.tn << '\t' << c.precision << '\t'
       << c.recall << '\t' << c.f1 << '\t' << (c.degenerate ? 1 : 0) << '\n';
  }
  os << head_name << "\tmacro\t-\t-\t-\t-\t-\t-\t-\t" << rep.macro_f1
     << "\t-\n";
}

inline void write_correlation_tsv(const std::vector<double>& corr, int n,
                                  const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot write " + path.string());
  os.precision(6);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j)
      os << (j ? "\t" : "") << corr[static_cast<std::size_t>(i) * n + j];
    os << '\n';
  }
}

// F1 per class per grid threshold, for the tau-sweep plot.
inline void write_tau_sweep_tsv(const Tensor& scores, const Tensor& labels,
                                const std::vector<double>& grid,
                                const std::filesystem::path& path) {
  const int N = scores.shape()[1];
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot write " + path.string());
  os.precision(6);
  os << "tau";
  for (int j = 0; j < N; ++j) os << "\tf1_class" << j;
  os << '\n';
  for (double tau : grid) {
    EvalReport rep = f1_frame(scores, labels, std::vector<double>(N, tau));
    os << tau;
    for (int j = 0; j < N; ++j) os << '\t' << rep.per_class[j].f1;
    os << '\n';
  }
}

}  // namespace dsin

#endif  // DSIN_EVALUATION_HPP
