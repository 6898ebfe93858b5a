#ifndef DSIN_FUSION_HPP
#define DSIN_FUSION_HPP

#include <string>
#include <vector>

#include "dsin/errors.hpp"
#include "dsin/patchnet.hpp"
#include "dsin/rng.hpp"
#include "dsin/tensor.hpp"

namespace dsin {

// Column j across the P stream predictions: the per-stream evidence for one
// AU, batched as [B, P].
inline Tensor gather_au_scores(const std::vector<Tensor>& stream_probs,
                               int j) {
  if (stream_probs.empty()) throw value_error("no stream predictions");
  const int N = stream_probs[0].shape()[1];
  if (j < 0 || j >= N)
    throw value_error("class index " + std::to_string(j) +
                      " out of range for N=" + std::to_string(N));
  std::vector<Tensor> cols;
  cols.reserve(stream_probs.size());
  for (const Tensor& p : stream_probs) cols.push_back(slice_col(p, j));
  return concat_cols(cols);
}

// Single-sample value-level variant: column j of a P x N score matrix.
inline std::vector<double> gather_au_scores(const Tensor& p, int j) {
  if (p.rank() != 2)
    throw shape_error("expected P x N score matrix, got " +
                      shape_str(p.shape()));
  const int P = p.shape()[0], N = p.shape()[1];
  if (j < 0 || j >= N)
    throw value_error("class index " + std::to_string(j) +
                      " out of range for N=" + std::to_string(N));
  std::vector<double> out(P);
  for (int i = 0; i < P; ++i)
    out[i] = p.values()[static_cast<std::size_t>(i) * N + j];
  return out;
}

struct FusionUnit {
  Tensor w1, b1;  // [P, hidden], [hidden]
  Tensor w2, b2;  // [hidden, 1], [1]
};

// One independent two-layer unit per AU, both layers sigmoid-activated:
// f_j = sigma(W2 sigma(W1 s_j + b1) + b2).
class FusionBank {
 public:
  FusionBank() = default;

  FusionBank(int n_streams, int n_labels, int hidden, RngStream& rng)
      : n_streams_(n_streams), hidden_(hidden) {
    for (int j = 0; j < n_labels; ++j) {
      FusionUnit u;
      u.w1 = Tensor::param({n_streams, hidden},
                           uniform_init(static_cast<std::size_t>(n_streams) *
                                            hidden,
                                        rng));
      u.b1 = Tensor::param({hidden}, uniform_init(hidden, rng));
      u.w2 = Tensor::param({hidden, 1}, uniform_init(hidden, rng));
      u.b2 = Tensor::param({1}, uniform_init(1, rng));
      units_.push_back(std::move(u));
    }
  }

  // s_j: [B, P] column scores for unit j -> [B, 1].
  Tensor forward_unit(int j, const Tensor& s_j) {
    const FusionUnit& u = units_.at(j);
    if (s_j.rank() != 2 || s_j.shape()[1] != n_streams_)
      throw shape_error("fusion unit expects [B," +
                        std::to_string(n_streams_) + "], got " +
                        shape_str(s_j.shape()));
    Tensor h = sigmoid(affine(s_j, u.w1, u.b1));
    return sigmoid(affine(h, u.w2, u.b2));
  }

  // stream_probs: P tensors of [B, N] -> fused [B, N].
  Tensor forward(const std::vector<Tensor>& stream_probs) {
    std::vector<Tensor> fused;
    fused.reserve(units_.size());
    for (int j = 0; j < static_cast<int>(units_.size()); ++j)
      fused.push_back(forward_unit(j, gather_au_scores(stream_probs, j)));
    return concat_cols(fused);
  }

  int n_units() const { return static_cast<int>(units_.size()); }
  std::vector<FusionUnit>& units() { return units_; }

  void collect_params(const std::string& prefix,
                      std::vector<NamedTensor>& out) {
    for (std::size_t j = 0; j < units_.size(); ++j) {
      const std::string p = prefix + ".au" + std::to_string(j);
      out.push_back({p + ".w1", units_[j].w1});
      out.push_back({p + ".b1", units_[j].b1});
      out.push_back({p + ".w2", units_[j].w2});
      out.push_back({p + ".b2", units_[j].b2});
    }
  }

 private:
  std::vector<FusionUnit> units_;
  int n_streams_ = 0;
  int hidden_ = 0;
};

// Binary cross-entropy, batch-averaged, with a defensive clamp away from
// the log singularities.
inline Tensor bce_loss(const Tensor& f, const Tensor& y) {
  if (f.shape() != y.shape())
    throw shape_error("bce_loss shapes disagree: " + shape_str(f.shape()) +
                      " vs " + shape_str(y.shape()));
  constexpr double lo = 1e-12;
  Tensor fc = clamp(f, lo, 1.0 - lo);
  Tensor pos = mul(y, log(fc));
  Tensor neg = mul(1.0 - y, log(1.0 - fc));
  return mean_all(add(pos, neg)) * -1.0;
}

}  // namespace dsin

#endif  // DSIN_FUSION_HPP
