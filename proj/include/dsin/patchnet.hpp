#ifndef DSIN_PATCHNET_HPP
#define DSIN_PATCHNET_HPP

#include <string>
#include <vector>

#include "dsin/conv.hpp"
#include "dsin/data.hpp"
#include "dsin/errors.hpp"
#include "dsin/rng.hpp"
#include "dsin/tensor.hpp"

namespace dsin {

// Plan for one patch predictor: stride-2 conv+BN+ReLU blocks down to a small
// spatial tail, then FC -> ReLU -> FC -> sigmoid over the N outputs.
struct TopologyPlan {
  StreamGeometry input;
  std::vector<int> conv_filters;
  std::vector<int> spatial_trace;  // side length after each block
  int fc_hidden = 256;
  int n_outputs = 0;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    int ch = input.c;
    for (int f : conv_filters) {
      n += 9ull * ch * f + 2ull * f;  // 3x3 filters + gamma/beta
      ch = f;
    }
    const std::size_t flat = static_cast<std::size_t>(spatial_trace.back()) *
                             spatial_trace.back() * ch;
    n += flat * fc_hidden + fc_hidden;
    n += static_cast<std::size_t>(fc_hidden) * n_outputs + n_outputs;
    return n;
  }
};

// 56x56 inputs get blocks of 32/64/96/128 filters (trace 56-28-14-7-4 under
// `same` padding); larger inputs take extra leading 16/24 blocks so the tail
// stays at most 4x4.
inline TopologyPlan build_topology(StreamGeometry input, int n_labels) {
  if (input.h != input.w)
    throw value_error("patch topology needs square input, got " + input.str());
  if (input.c < 1 || n_labels < 1)
    throw value_error("bad topology request for " + input.str());
  TopologyPlan plan;
  plan.input = input;
  plan.n_outputs = n_labels;

  int side = input.h;
  std::vector<int> trace;
  int blocks = 0;
  while (blocks < 4 || (side > 4 && blocks < 6)) {
    const int next = (side + 1) / 2;
    if (next >= side)
      throw value_error("input side " + std::to_string(input.h) +
                        " does not admit " + std::to_string(blocks + 1) +
                        " stride-2 halvings");
    side = next;
    trace.push_back(side);
    ++blocks;
  }
  if (side > 4)
    throw value_error("input side " + std::to_string(input.h) +
                      " too large for the six-block topology");
  static const std::vector<int> base = {32, 64, 96, 128};
  static const std::vector<int> leading = {16, 24};
  const int extra = blocks - 4;
  for (int i = static_cast<int>(leading.size()) - extra;
       i < static_cast<int>(leading.size()); ++i)
    plan.conv_filters.push_back(leading[i]);
  plan.conv_filters.insert(plan.conv_filters.end(), base.begin(), base.end());
  plan.spatial_trace = std::move(trace);
  return plan;
}

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ConvBlock {
  Tensor filters;  // [3,3,in,out]
  Tensor gamma, beta;
  BatchNormState bn;
};

inline std::vector<double> uniform_init(std::size_t n, RngStream& rng,
                                        double half_width = 0.05,
                                        double center = 0.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = center + rng.uniform(-half_width, half_width);
  return v;
}

// One independent per-patch CNN: conv blocks from the plan, FC tail, sigmoid
// head emitting N probabilities.
class PatchNet {
 public:
  PatchNet() = default;

  PatchNet(TopologyPlan plan, RngStream& rng) : plan_(std::move(plan)) {
    int ch = plan_.input.c;
    for (int f : plan_.conv_filters) {
      ConvBlock b;
      b.filters = Tensor::param({3, 3, ch, f}, uniform_init(9ull * ch * f, rng));
      // gamma is a scale, initialized around 1
      b.gamma = Tensor::param({f}, uniform_init(f, rng, 0.05, 1.0));
      b.beta = Tensor::param({f}, uniform_init(f, rng));
      blocks_.push_back(std::move(b));
      ch = f;
    }
    const int tail = plan_.spatial_trace.back();
    flat_ = tail * tail * ch;
    fc1_w_ = Tensor::param({flat_, plan_.fc_hidden},
                           uniform_init(static_cast<std::size_t>(flat_) *
                                            plan_.fc_hidden,
                                        rng));
    fc1_b_ = Tensor::param({plan_.fc_hidden}, uniform_init(plan_.fc_hidden, rng));
    fc2_w_ = Tensor::param({plan_.fc_hidden, plan_.n_outputs},
                           uniform_init(static_cast<std::size_t>(plan_.fc_hidden) *
                                            plan_.n_outputs,
                                        rng));
    fc2_b_ = Tensor::param({plan_.n_outputs},
                           uniform_init(plan_.n_outputs, rng));
  }

  // x: [B,h,w,c] batch of patches -> [B,N] probabilities in (0,1).
  Tensor forward(const Tensor& x, BnMode mode, bool track_stats = true) {
    if (x.rank() != 4 || x.shape()[1] != plan_.input.h ||
        x.shape()[2] != plan_.input.w || x.shape()[3] != plan_.input.c)
      throw shape_error("patch batch " + shape_str(x.shape()) +
                        " does not match stream input " + plan_.input.str());
    Tensor h = x;
    for (ConvBlock& b : blocks_) {
      h = conv2d(h, b.filters, 2, Padding::same);
      h = batch_norm(h, b.gamma, b.beta, b.bn, mode, track_stats);
      h = relu(h);
    }
    h = reshape(h, {x.shape()[0], flat_});
    h = relu(affine(h, fc1_w_, fc1_b_));
    return sigmoid(affine(h, fc2_w_, fc2_b_));
  }

  const TopologyPlan& plan() const { return plan_; }
  std::vector<ConvBlock>& conv_blocks() { return blocks_; }

  void collect_params(const std::string& prefix,
                      std::vector<NamedTensor>& out) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = prefix + ".conv" + std::to_string(i);
      out.push_back({p + ".filters", blocks_[i].filters});
      out.push_back({p + ".gamma", blocks_[i].gamma});
      out.push_back({p + ".beta", blocks_[i].beta});
    }
    out.push_back({prefix + ".fc1.w", fc1_w_});
    out.push_back({prefix + ".fc1.b", fc1_b_});
    out.push_back({prefix + ".fc2.w", fc2_w_});
    out.push_back({prefix + ".fc2.b", fc2_b_});
  }

  // Conv-stage tensors only, for the transfer-style freeze_conv flag.
  void collect_conv_params(const std::string& prefix,
                           std::vector<NamedTensor>& out) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = prefix + ".conv" + std::to_string(i);
      out.push_back({p + ".filters", blocks_[i].filters});
      out.push_back({p + ".gamma", blocks_[i].gamma});
      out.push_back({p + ".beta", blocks_[i].beta});
    }
  }

 private:
  TopologyPlan plan_;
  std::vector<ConvBlock> blocks_;
  Tensor fc1_w_, fc1_b_, fc2_w_, fc2_b_;
  int flat_ = 0;
};

// L = mean over batch and classes of c_j(y_j) (p_j - y_j)^2 with
// c_j(1) = w_pos_j and c_j(0) = 1.
inline Tensor weighted_l2_loss(const Tensor& p, const Tensor& y,
                               const ClassStats& stats) {
  if (p.shape() != y.shape() || p.rank() != 2)
    throw shape_error("weighted_l2_loss shapes disagree: " +
                      shape_str(p.shape()) + " vs " + shape_str(y.shape()));
  const int B = p.shape()[0], N = p.shape()[1];
  if (static_cast<int>(stats.w_pos.size()) != N)
    throw shape_error("class stats cover " +
                      std::to_string(stats.w_pos.size()) + " classes, need " +
                      std::to_string(N));
  Tensor c = Tensor::zeros({B, N});
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < N; ++j)
      c.values()[static_cast<std::size_t>(b) * N + j] =
          y.values()[static_cast<std::size_t>(b) * N + j] > 0.5
              ? stats.w_pos[j]
              : 1.0;
  Tensor d = sub(p, y);
  return mean_all(mul(c, mul(d, d)));
}

}  // namespace dsin

#endif  // DSIN_PATCHNET_HPP
