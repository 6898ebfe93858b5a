// Independent reference implementations used to check the library: written
// as plain scalar loops against the printed update rules, deliberately
// sharing no code with the vectorized paths they verify.
#ifndef DSIN_TESTS_ORACLES_HPP
#define DSIN_TESTS_ORACLES_HPP

#include <cmath>
#include <vector>

namespace oracle {

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Per-unit scalar parameters for one structure-inference unit.
struct SiuScalarParams {
  double wm[3], bm;
  double wg[3], bg;
  double wy[2], by;
};

struct SiStepTrace {
  std::vector<double> m, chi, yhat;
};

// Naive per-node / per-edge unroll for a single sample. Materializes the
// full N x N gated message matrix every step.
inline std::vector<double> si_unroll_naive(
    const std::vector<double>& f, const std::vector<SiuScalarParams>& params,
    int T, bool correction_factors = true, bool include_self = true,
    std::vector<SiStepTrace>* trace = nullptr) {
  const int N = static_cast<int>(f.size());
  std::vector<double> m_prev = f, y_prev = f;
  for (int t = 1; t <= T; ++t) {
    // messages
    std::vector<double> m_t(N);
    for (int j = 0; j < N; ++j) {
      double mu = 0.0;
      int cnt = 0;
      for (int i = 0; i < N; ++i) {
        if (!include_self && i == j) continue;
        mu += m_prev[i];
        ++cnt;
      }
      mu /= cnt;
      m_t[j] = sig(params[j].wm[0] * mu + params[j].wm[1] * f[j] +
                   params[j].wm[2] * y_prev[j] + params[j].bm);
    }
    // correction factors (mean over all current messages)
    std::vector<double> chi(N);
    for (int j = 0; j < N; ++j) {
      double mu = 0.0;
      for (int i = 0; i < N; ++i) mu += m_t[i];
      mu /= N;
      chi[j] = sig(params[j].wg[0] * mu + params[j].wg[1] * f[j] +
                   params[j].wg[2] * y_prev[j] + params[j].bg);
    }
    // gated message matrix, sender i -> recipient j
    std::vector<double> mbar(static_cast<std::size_t>(N) * N);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j)
        mbar[static_cast<std::size_t>(i) * N + j] =
            correction_factors ? 0.5 * (chi[i] + chi[j]) * m_t[i] : m_t[i];
    // predictions from recipient-side means
    std::vector<double> y_t(N);
    for (int j = 0; j < N; ++j) {
      double mu = 0.0;
      int cnt = 0;
      for (int i = 0; i < N; ++i) {
        if (!include_self && i == j) continue;
        mu += mbar[static_cast<std::size_t>(i) * N + j];
        ++cnt;
      }
      mu /= cnt;
      y_t[j] = sig(params[j].wy[0] * mu + params[j].wy[1] * f[j] +
                   params[j].by);
    }
    if (trace) trace->push_back({m_t, chi, y_t});
    m_prev = m_t;
    y_prev = y_t;
  }
  return y_prev;
}

// Brute-force confusion counts for one class at threshold tau.
struct Confusion {
  long tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Confusion confusion_naive(const std::vector<double>& scores,
                                 const std::vector<int>& labels, double tau) {
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= tau;
    if (pred && labels[i]) ++c.tp;
    else if (pred && !labels[i]) ++c.fp;
    else if (!pred && labels[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline double f1_naive(const Confusion& c) {
  const double p = c.tp + c.fp ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0;
  const double r = c.tp + c.fn ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0;
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

}  // namespace oracle

#endif  // DSIN_TESTS_ORACLES_HPP
