#ifndef DSIN_MODEL_HPP
#define DSIN_MODEL_HPP

#include <string>
#include <utility>
#include <vector>

#include "dsin/data.hpp"
#include "dsin/errors.hpp"
#include "dsin/fusion.hpp"
#include "dsin/patchnet.hpp"
#include "dsin/rng.hpp"
#include "dsin/structure_inference.hpp"
#include "dsin/tensor.hpp"

namespace dsin {

struct ModelConfig {
  int n_labels = 0;
  std::vector<StreamGeometry> streams;
  int fusion_hidden = 64;
  int T = 10;
  SIOptions si;
};

// Batch of one stream across samples: [B, h, w, c].
inline Tensor make_stream_batch(const Dataset& ds,
                                const std::vector<std::size_t>& indices,
                                int stream) {
  const StreamGeometry g = ds.streams.at(stream);
  const int B = static_cast<int>(indices.size());
  Tensor out = Tensor::zeros({B, g.h, g.w, g.c});
  const std::size_t per = static_cast<std::size_t>(g.h) * g.w * g.c;
  for (int b = 0; b < B; ++b) {
    const Tensor& src = ds.samples[indices[b]].patches[stream];
    std::copy(src.values().begin(), src.values().end(),
              out.values().begin() + b * per);
  }
  return out;
}

inline Tensor make_label_batch(const Dataset& ds,
                               const std::vector<std::size_t>& indices) {
  const int B = static_cast<int>(indices.size());
  const int N = ds.n_labels;
  Tensor out = Tensor::zeros({B, N});
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < N; ++j)
      out.values()[static_cast<std::size_t>(b) * N + j] =
          ds.samples[indices[b]].labels[j];
  return out;
}

// The full three-stage network: P independent patch predictors, N fusion
// units, N structure inference units. Parameters live in three named blocks
// (pi, phi, omega) so stages can freeze and resume them independently.
class DsinModel {
 public:
  DsinModel() = default;

  DsinModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    if (cfg_.n_labels < 1 || cfg_.streams.empty())
      throw config_error("model needs at least one label and one stream");
    RngStream rng = derive_stream(seed, {0x1417});
    for (std::size_t i = 0; i < cfg_.streams.size(); ++i)
      streams_.emplace_back(build_topology(cfg_.streams[i], cfg_.n_labels),
                            rng);
    fusion_ = FusionBank(static_cast<int>(cfg_.streams.size()), cfg_.n_labels,
                         cfg_.fusion_hidden, rng);
    siu_ = SIUParams::init(cfg_.n_labels, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  int n_streams() const { return static_cast<int>(streams_.size()); }

  Tensor forward_stream(int i, const Tensor& batch, BnMode mode,
                        bool track_stats = true) {
    return streams_.at(i).forward(batch, mode, track_stats);
  }

  struct Heads {
    std::vector<Tensor> p;  // per stream, [B, N]
    Tensor f;               // [B, N]
    Tensor yhat;            // [B, N]
    SITrace trace;
  };

  Heads forward(const std::vector<Tensor>& stream_batches, BnMode pi_mode,
                bool track_stats = true, int T_override = -1) {
    if (static_cast<int>(stream_batches.size()) != n_streams())
      throw shape_error("expected " + std::to_string(n_streams()) +
                        " stream batches, got " +
                        std::to_string(stream_batches.size()));
    Heads h;
    for (int i = 0; i < n_streams(); ++i)
      h.p.push_back(streams_[i].forward(stream_batches[i], pi_mode,
                                        track_stats));
    h.f = fusion_.forward(h.p);
    const int T = T_override >= 0 ? T_override : cfg_.T;
    SIResult res = si_unroll(h.f, siu_, T, cfg_.si);
    h.yhat = res.yhat;
    h.trace = std::move(res.trace);
    return h;
  }

  // --- parameter blocks ------------------------------------------------

  std::vector<NamedTensor> pi_params(int stream) {
    std::vector<NamedTensor> out;
    streams_.at(stream).collect_params("pi.s" + std::to_string(stream), out);
    return out;
  }

  std::vector<NamedTensor> pi_fc_params(int stream) {
    std::vector<NamedTensor> all = pi_params(stream);
    std::vector<NamedTensor> out;
    for (auto& nt : all)
      if (nt.name.find(".fc") != std::string::npos) out.push_back(nt);
    return out;
  }

  std::vector<NamedTensor> pi_params() {
    std::vector<NamedTensor> out;
    for (int i = 0; i < n_streams(); ++i) {
      auto s = pi_params(i);
      out.insert(out.end(), s.begin(), s.end());
    }
    return out;
  }

  std::vector<NamedTensor> phi_params() {
    std::vector<NamedTensor> out;
    fusion_.collect_params("phi", out);
    return out;
  }

  std::vector<NamedTensor> omega_params() {
    std::vector<NamedTensor> out;
    siu_.collect_params("omega", out);
    return out;
  }

  std::vector<NamedTensor> all_params() {
    std::vector<NamedTensor> out = pi_params();
    auto f = phi_params();
    auto o = omega_params();
    out.insert(out.end(), f.begin(), f.end());
    out.insert(out.end(), o.begin(), o.end());
    return out;
  }

  // Batch-norm running statistics, named for checkpointing.
  std::vector<std::pair<std::string, BatchNormState*>> bn_states() {
    std::vector<std::pair<std::string, BatchNormState*>> out;
    for (int i = 0; i < n_streams(); ++i) {
      auto& blocks = streams_[i].conv_blocks();
      for (std::size_t b = 0; b < blocks.size(); ++b)
        out.emplace_back("pi.s" + std::to_string(i) + ".conv" +
                             std::to_string(b) + ".bn",
                         &blocks[b].bn);
    }
    return out;
  }

  bool bn_initialized() {
    for (auto& [name, st] : bn_states())
      if (!st->initialized()) return false;
    return true;
  }

  FusionBank& fusion() { return fusion_; }
  SIUParams& siu() { return siu_; }
  PatchNet& stream(int i) { return streams_.at(i); }

 private:
  ModelConfig cfg_;
  std::vector<PatchNet> streams_;
  FusionBank fusion_;
  SIUParams siu_;
};

}  // namespace dsin

#endif  // DSIN_MODEL_HPP
