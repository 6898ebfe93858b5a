#ifndef DSIN_CONV_HPP
#define DSIN_CONV_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dsin/errors.hpp"
#include "dsin/tensor.hpp"

namespace dsin {

enum class Padding { same, valid };
enum class BnMode { train, infer };

// Cross-correlation of x [B,H,W,C] with filters [K,K,C,F].
// `same` zero-padding keeps out dim = ceil(dim/stride); `valid` requires the
// kernel to fit without padding.
inline Tensor conv2d(const Tensor& x, const Tensor& filters, int stride,
                     Padding padding) {
  if (x.rank() != 4 || filters.rank() != 4)
    throw shape_error("conv2d expects x rank 4 and filters rank 4, got x=" +
                      shape_str(x.shape()) +
                      " filters=" + shape_str(filters.shape()));
  if (stride < 1) throw value_error("conv2d stride must be >= 1");
  const int B = x.shape()[0], H = x.shape()[1], W = x.shape()[2],
            C = x.shape()[3];
  const int KH = filters.shape()[0], KW = filters.shape()[1],
            FC = filters.shape()[2], F = filters.shape()[3];
  if (FC != C)
    throw shape_error("conv2d channel mismatch: x=" + shape_str(x.shape()) +
                      " filters=" + shape_str(filters.shape()));

  int OH, OW, pad_top, pad_left;
  if (padding == Padding::same) {
    OH = (H + stride - 1) / stride;
    OW = (W + stride - 1) / stride;
    const int pad_h = std::max((OH - 1) * stride + KH - H, 0);
    const int pad_w = std::max((OW - 1) * stride + KW - W, 0);
    pad_top = pad_h / 2;
    pad_left = pad_w / 2;
    if (KH > H + pad_h || KW > W + pad_w)
      throw shape_error("conv2d kernel " + shape_str(filters.shape()) +
                        " larger than padded input " + shape_str(x.shape()));
  } else {
    if (KH > H || KW > W)
      throw shape_error("conv2d kernel " + shape_str(filters.shape()) +
                        " larger than input " + shape_str(x.shape()));
    OH = (H - KH) / stride + 1;
    OW = (W - KW) / stride + 1;
    pad_top = 0;
    pad_left = 0;
  }

  auto xn = x.node();
  auto fn = filters.node();
  auto loop = [=](const double* xv, const double* wv, double* ov,
                  const double* gv, double* xg, double* wg) {
    // One pass drives forward (ov != nullptr) or backward (gv != nullptr).
    for (int b = 0; b < B; ++b)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          const std::size_t obase =
              ((static_cast<std::size_t>(b) * OH + oy) * OW + ox) * F;
          for (int ky = 0; ky < KH; ++ky) {
            const int iy = oy * stride + ky - pad_top;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < KW; ++kx) {
              const int ix = ox * stride + kx - pad_left;
              if (ix < 0 || ix >= W) continue;
              const std::size_t xbase =
                  ((static_cast<std::size_t>(b) * H + iy) * W + ix) * C;
              const std::size_t wbase =
                  (static_cast<std::size_t>(ky) * KW + kx) *
                  static_cast<std::size_t>(C) * F;
              for (int c = 0; c < C; ++c) {
                const std::size_t wrow = wbase + static_cast<std::size_t>(c) * F;
                if (ov) {
                  const double xval = xv[xbase + c];
                  double* orow = ov + obase;
                  const double* wr = wv + wrow;
                  for (int f = 0; f < F; ++f) orow[f] += xval * wr[f];
                } else {
                  const double* grow = gv + obase;
                  if (xg) {
                    const double* wr = wv + wrow;
                    double acc = 0;
                    for (int f = 0; f < F; ++f) acc += grow[f] * wr[f];
                    xg[xbase + c] += acc;
                  }
                  if (wg) {
                    const double xval = xv[xbase + c];
                    double* wr = wg + wrow;
                    for (int f = 0; f < F; ++f) wr[f] += xval * grow[f];
                  }
                }
              }
            }
          }
        }
  };

  Tensor out = detail::make_op(
      {B, OH, OW, F}, "conv2d", {x, filters}, [xn, fn, loop](TensorNode& self) {
        double* xg = nullptr;
        double* wg = nullptr;
        if (xn->requires_grad) {
          xn->ensure_grad();
          xg = xn->grad.data();
        }
        if (fn->requires_grad) {
          fn->ensure_grad();
          wg = fn->grad.data();
        }
        loop(xn->values.data(), fn->values.data(), nullptr, self.grad.data(),
             xg, wg);
      });
  loop(x.values().data(), filters.values().data(), out.values().data(),
       nullptr, nullptr, nullptr);
  return out;
}

// Per-channel running statistics, momentum 0.9. Uninitialized until the
// first tracked train-mode pass.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  std::int64_t batches_seen = 0;
  static constexpr double momentum = 0.9;

  bool initialized() const { return batches_seen > 0; }
};

// Normalizes over all leading axes; the last axis is the channel axis.
// Train mode uses batch statistics (variance floor eps) and, when `track`,
// folds them into the running statistics. Infer mode uses running stats.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, BatchNormState& state,
                         BnMode mode, bool track = true) {
  constexpr double eps = 1e-5;
  if (x.rank() < 2)
    throw shape_error("batch_norm expects rank >= 2, got " +
                      shape_str(x.shape()));
  const int C = x.shape().back();
  if (gamma.size() != static_cast<std::size_t>(C) ||
      beta.size() != static_cast<std::size_t>(C))
    throw shape_error("batch_norm gamma/beta must have length " +
                      std::to_string(C));
  const std::size_t M = x.size() / static_cast<std::size_t>(C);

  std::vector<double> mean(C, 0.0), var(C, 0.0);
  if (mode == BnMode::train) {
    const auto& xv = x.values();
    for (std::size_t i = 0; i < M; ++i)
      for (int c = 0; c < C; ++c) mean[c] += xv[i * C + c];
    for (int c = 0; c < C; ++c) mean[c] /= static_cast<double>(M);
    for (std::size_t i = 0; i < M; ++i)
      for (int c = 0; c < C; ++c) {
        const double d = xv[i * C + c] - mean[c];
        var[c] += d * d;
      }
    for (int c = 0; c < C; ++c) var[c] /= static_cast<double>(M);
    if (track) {
      if (!state.initialized()) {
        state.running_mean = mean;
        state.running_var = var;
      } else {
        for (int c = 0; c < C; ++c) {
          state.running_mean[c] = BatchNormState::momentum *
                                      state.running_mean[c] +
                                  (1.0 - BatchNormState::momentum) * mean[c];
          state.running_var[c] = BatchNormState::momentum *
                                     state.running_var[c] +
                                 (1.0 - BatchNormState::momentum) * var[c];
        }
      }
      ++state.batches_seen;
    }
  } else {
    if (!state.initialized())
      throw state_error(
          "batch_norm inference requires initialized running statistics");
    mean = state.running_mean;
    var = state.running_var;
  }

  std::vector<double> inv_std(C);
  for (int c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  const bool train = mode == BnMode::train;
  Tensor out = detail::make_op(
      x.shape(), "batch_norm", {x, gamma, beta},
      [xn, gn, bn, mean, inv_std, M, C, train](TensorNode& self) {
        const auto& xv = xn->values;
        const auto& g = self.grad;
        // dgamma/dbeta from xhat
        if (gn->requires_grad || bn->requires_grad) {
          if (gn->requires_grad) gn->ensure_grad();
          if (bn->requires_grad) bn->ensure_grad();
          for (std::size_t i = 0; i < M; ++i)
            for (int c = 0; c < C; ++c) {
              const double xhat = (xv[i * C + c] - mean[c]) * inv_std[c];
              if (gn->requires_grad) gn->grad[c] += g[i * C + c] * xhat;
              if (bn->requires_grad) bn->grad[c] += g[i * C + c];
            }
        }
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        if (train) {
          // Full gradient through the batch statistics.
          std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
          for (std::size_t i = 0; i < M; ++i)
            for (int c = 0; c < C; ++c) {
              const double xhat = (xv[i * C + c] - mean[c]) * inv_std[c];
              sum_g[c] += g[i * C + c];
              sum_gx[c] += g[i * C + c] * xhat;
            }
          const double invM = 1.0 / static_cast<double>(M);
          for (std::size_t i = 0; i < M; ++i)
            for (int c = 0; c < C; ++c) {
              const double xhat = (xv[i * C + c] - mean[c]) * inv_std[c];
              xn->grad[i * C + c] +=
                  gn->values[c] * inv_std[c] *
                  (g[i * C + c] - invM * sum_g[c] - xhat * invM * sum_gx[c]);
            }
        } else {
          for (std::size_t i = 0; i < M; ++i)
            for (int c = 0; c < C; ++c)
              xn->grad[i * C + c] +=
                  g[i * C + c] * gn->values[c] * inv_std[c];
        }
      });
  auto& ov = out.values();
  const auto& xv = x.values();
  for (std::size_t i = 0; i < M; ++i)
    for (int c = 0; c < C; ++c)
      ov[i * C + c] = gamma.values()[c] * (xv[i * C + c] - mean[c]) *
                          inv_std[c] +
                      beta.values()[c];
  return out;
}

}  // namespace dsin

#endif  // DSIN_CONV_HPP
