#ifndef DSIN_STRUCTURE_INFERENCE_HPP
#define DSIN_STRUCTURE_INFERENCE_HPP

#include <string>
#include <vector>

#include "dsin/errors.hpp"
#include "dsin/patchnet.hpp"
#include "dsin/rng.hpp"
#include "dsin/tensor.hpp"

namespace dsin {

// One structure inference unit per AU. Each unit owns a message function
// (3 weights + bias), a gate function (3 weights + bias) and a prediction
// function (2 weights + bias); the weights are stored as N-vectors, entry j
// belonging to unit j. A single copy is shared across all T iterations.
struct SIUParams {
  Tensor wm_mu, wm_f, wm_y, bm;  // message unit
  Tensor wg_mu, wg_f, wg_y, bg;  // gate unit
  Tensor wy_mu, wy_f, by;        // prediction unit

  static SIUParams init(int n_labels, RngStream& rng) {
    SIUParams p;
    auto mk = [&]() {
      return Tensor::param({n_labels}, uniform_init(n_labels, rng));
    };
    p.wm_mu = mk(); p.wm_f = mk(); p.wm_y = mk(); p.bm = mk();
    p.wg_mu = mk(); p.wg_f = mk(); p.wg_y = mk(); p.bg = mk();
    p.wy_mu = mk(); p.wy_f = mk(); p.by = mk();
    return p;
  }

  int n_labels() const { return wm_mu.shape()[0]; }

  void collect_params(const std::string& prefix,
                      std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".w_msg_mu", wm_mu});
    out.push_back({prefix + ".w_msg_f", wm_f});
    out.push_back({prefix + ".w_msg_yprev", wm_y});
    out.push_back({prefix + ".b_msg", bm});
    out.push_back({prefix + ".w_gate_mu", wg_mu});
    out.push_back({prefix + ".w_gate_f", wg_f});
    out.push_back({prefix + ".w_gate_yprev", wg_y});
    out.push_back({prefix + ".b_gate", bg});
    out.push_back({prefix + ".w_pred_mu", wy_mu});
    out.push_back({prefix + ".w_pred_f", wy_f});
    out.push_back({prefix + ".b_pred", by});
  }
};

struct SIOptions {
  bool correction_factors = true;  // off reproduces the ncf ablation
  bool include_self = true;        // self-messages in the two aggregations
};

struct SIState {
  int t = 0;
  Tensor m;     // [B, N] messages
  Tensor chi;   // [B, N] correction factors (unset until t >= 1)
  Tensor yhat;  // [B, N] predictions
  Tensor f;     // [B, N] fused inputs, constant over iterations
};

// m0 = yhat0 = f: the unroll starts as a smooth refinement of the fusion.
inline SIState si_init(const Tensor& f) {
  if (f.rank() != 2)
    throw shape_error("si_init expects [B,N] fused predictions, got " +
                      shape_str(f.shape()));
  for (double v : f.values())
    if (!(v > 0.0 && v < 1.0))
      throw value_error("si_init requires fused predictions in (0,1)");
  SIState s;
  s.m = f;
  s.yhat = f;
  s.f = f;
  return s;
}

namespace detail_si {
// Mean over senders, per recipient: with self included this is a plain
// column mean broadcast; without, recipient j drops its own entry.
inline Tensor sender_mean(const Tensor& m, bool include_self) {
  const int N = m.shape()[1];
  Tensor mu = mean_reduce(m, 1);  // [B,1]
  if (include_self) return mu;
  if (N < 2)
    throw value_error("excluding self-messages needs at least two units");
  return (mu * static_cast<double>(N) - m) * (1.0 / (N - 1));
}
}  // namespace detail_si

// m_j^t = sigma(wm . [mean(m^{t-1}), f_j, yhat_j^{t-1}] + bm_j)
inline Tensor compute_messages(const SIState& prev, const SIUParams& p,
                               const SIOptions& o = {}) {
  Tensor mu = detail_si::sender_mean(prev.m, o.include_self);
  return sigmoid(add(add(mul(p.wm_mu, mu), mul(p.wm_f, prev.f)),
                     add(mul(p.wm_y, prev.yhat), p.bm)));
}

// chi_j^t = sigma(wg . [mean(m^t), f_j, yhat_j^{t-1}] + bg_j)
inline Tensor compute_correction_factors(const Tensor& m_t,
                                         const SIState& prev,
                                         const SIUParams& p) {
  Tensor mu = mean_reduce(m_t, 1);
  return sigmoid(add(add(mul(p.wg_mu, mu), mul(p.wg_f, prev.f)),
                     add(mul(p.wg_y, prev.yhat), p.bg)));
}

// Value-level gated message matrix for one sample: entry (i, j) is
// mbar_{i->j} = mean(chi_i, chi_j) * m_i.
inline std::vector<double> gate_messages(const std::vector<double>& m,
                                         const std::vector<double>& chi) {
  if (m.size() != chi.size())
    throw shape_error("gate_messages length mismatch");
  const std::size_t n = m.size();
  std::vector<double> out(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = 0.5 * (chi[i] + chi[j]) * m[i];
  return out;
}

// Mean over gated incoming messages, per recipient, in closed form:
//   mean_i mu(chi_i, chi_j) m_i = (mean_i(chi_i m_i) + chi_j mean_i(m_i)) / 2
// which keeps the unroll free of the explicit N x N matrix.
inline Tensor gated_incoming_mean(const Tensor& m_t, const Tensor& chi_t,
                                  const SIOptions& o) {
  if (!o.correction_factors) return detail_si::sender_mean(m_t, o.include_self);
  const int N = m_t.shape()[1];
  Tensor mean_cm = mean_reduce(mul(chi_t, m_t), 1);  // [B,1]
  Tensor mean_m = mean_reduce(m_t, 1);               // [B,1]
  if (o.include_self)
    return (add(mean_cm, mul(chi_t, mean_m))) * 0.5;
  if (N < 2)
    throw value_error("excluding self-messages needs at least two units");
  Tensor self_term = mul(chi_t, m_t);
  Tensor sum_cm = mean_cm * static_cast<double>(N);
  Tensor sum_m = mean_m * static_cast<double>(N);
  return (add(sub(sum_cm, self_term), mul(chi_t, sub(sum_m, m_t)))) *
         (0.5 / (N - 1));
}

// yhat_j^t = sigma(wy . [mean(mbar incoming to j), f_j] + by_j)
inline Tensor compute_predictions(const Tensor& m_t, const Tensor& chi_t,
                                  const Tensor& f, const SIUParams& p,
                                  const SIOptions& o = {}) {
  Tensor incoming = gated_incoming_mean(m_t, chi_t, o);
  return sigmoid(add(add(mul(p.wy_mu, incoming), mul(p.wy_f, f)), p.by));
}

struct SITrace {
  std::vector<Tensor> m, chi, yhat;  // one [B,N] entry per step t = 1..T
};

struct SIResult {
  Tensor yhat;
  SITrace trace;
};

// Unrolls T iterations of message -> correction factors -> gating ->
// prediction; T = 0 returns the fused input unchanged. The whole unroll is
// recorded on the tape, so losses on yhat differentiate end-to-end.
inline SIResult si_unroll(const Tensor& f, const SIUParams& p, int T,
                          const SIOptions& o = {}) {
  if (T < 0) throw value_error("iteration count T must be >= 0");
  SIResult res;
  if (T == 0) {
    res.yhat = f;
    return res;
  }
  SIState state = si_init(f);
  for (int t = 1; t <= T; ++t) {
    Tensor m_t = compute_messages(state, p, o);
    Tensor chi_t = compute_correction_factors(m_t, state, p);
    Tensor yhat_t = compute_predictions(m_t, chi_t, f, p, o);
    state.m = m_t;
    state.chi = chi_t;
    state.yhat = yhat_t;
    state.t = t;
    res.trace.m.push_back(m_t);
    res.trace.chi.push_back(chi_t);
    res.trace.yhat.push_back(yhat_t);
  }
  res.yhat = state.yhat;
  return res;
}

// r times the mean of all correction factors in the trace; chi lies in (0,1)
// so the mean absolute value is the mean itself.
inline Tensor chi_regularizer(const SITrace& trace, double r) {
  if (r < 0) throw value_error("regularizer strength r must be >= 0");
  if (r == 0.0 || trace.chi.empty()) return Tensor::scalar(0.0);
  Tensor acc = mean_all(trace.chi[0]);
  for (std::size_t t = 1; t < trace.chi.size(); ++t)
    acc = add(acc, mean_all(trace.chi[t]));
  return acc * (r / static_cast<double>(trace.chi.size()));
}

}  // namespace dsin

#endif  // DSIN_STRUCTURE_INFERENCE_HPP
