#ifndef DSIN_TRAINING_HPP
#define DSIN_TRAINING_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dsin/errors.hpp"
#include "dsin/model.hpp"
#include "dsin/serialize.hpp"

namespace dsin {

// Every knob of the staged training procedure.
struct TrainConfig {
  std::vector<int> stages = {1, 2, 3, 4, 5};
  double w1 = 0.25, w2 = 0.25, w3 = 0.5;  // compound loss weights
  double r = 5e-3;                         // correction factor regularizer
  int T = 10;                              // structure inference iterations
  double lr = 0.001;
  int batch = 64;
  int max_epochs = 200;
  int patience = 10;
  double min_delta = 1e-5;
  std::uint64_t seed = 0;
  bool balancing = true;
  bool freeze_conv = false;
  bool correction_factors = true;
  bool include_self = true;
  int fusion_hidden = 64;
  bool parallel_streams = false;

  std::string canonical() const {
    std::ostringstream os;
    os << "stages=";
    for (std::size_t i = 0; i < stages.size(); ++i)
      os << (i ? "," : "") << stages[i];
    os << ";w1=" << w1 << ";w2=" << w2 << ";w3=" << w3 << ";r=" << r
       << ";T=" << T << ";lr=" << lr << ";batch=" << batch
       << ";max_epochs=" << max_epochs << ";patience=" << patience
       << ";min_delta=" << min_delta << ";seed=" << seed
       << ";balancing=" << balancing << ";freeze_conv=" << freeze_conv
       << ";correction_factors=" << correction_factors
       << ";include_self=" << include_self
       << ";fusion_hidden=" << fusion_hidden;
    return os.str();
  }
};

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline void validate(const TrainConfig& cfg) {
  if (cfg.stages.empty()) throw config_error("no training stages requested");
  std::vector<int> seen;
  for (int s : cfg.stages) {
    if (s < 1 || s > 5)
      throw config_error("unknown training stage " + std::to_string(s));
    if (std::find(seen.begin(), seen.end(), s) != seen.end())
      throw config_error("stage " + std::to_string(s) + " listed twice");
    seen.push_back(s);
  }
  if (cfg.w1 < 0 || cfg.w2 < 0 || cfg.w3 < 0)
    throw config_error("compound loss weights must be >= 0");
  if (cfg.r < 0) throw config_error("regularizer r must be >= 0");
  if (cfg.T < 0) throw config_error("iteration count T must be >= 0");
  if (cfg.lr <= 0 || cfg.batch < 1 || cfg.max_epochs < 1 || cfg.patience < 1)
    throw config_error("bad optimizer configuration");
}

// --------------------------------------------------------------------------
// Adam
// --------------------------------------------------------------------------

struct AdamState {
  std::vector<double> m, v;
  std::int64_t t = 0;
};

// Standard bias-corrected Adam update, applied in place to each tensor from
// its accumulated gradient. beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
inline void adam_step(std::vector<NamedTensor>& params,
                      std::map<std::string, AdamState>& state, double lr) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  for (NamedTensor& nt : params) {
    auto& g = nt.tensor.grad();
    for (double gv : g)
      if (!std::isfinite(gv))
        throw numeric_error("non-finite gradient in " + nt.name);
    AdamState& st = state[nt.name];
    if (st.m.empty()) {
      st.m.assign(g.size(), 0.0);
      st.v.assign(g.size(), 0.0);
    }
    ++st.t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
    auto& vals = nt.tensor.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g[i];
      st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = st.m[i] / c1;
      const double vhat = st.v[i] / c2;
      vals[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

inline void zero_grads(std::vector<NamedTensor>& params) {
  for (NamedTensor& nt : params) nt.tensor.zero_grad();
}

// --------------------------------------------------------------------------
// Early stopping
// --------------------------------------------------------------------------

// Stops once validation loss has not improved by more than min_delta for
// `patience` consecutive epochs; the caller restores the best-epoch snapshot.
struct EarlyStopper {
  int patience;
  double min_delta = 1e-5;
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int stall = 0;

  // true = stop now
  bool update(double val_loss, int epoch) {
    if (val_loss < best - min_delta) {
      best = val_loss;
      best_epoch = epoch;
      stall = 0;
      return false;
    }
    ++stall;
    return stall >= patience;
  }
};

// Free-function form over a loss history (1-based epochs).
inline bool should_stop(const std::vector<double>& val_history, int patience,
                        double min_delta = 1e-5) {
  if (val_history.empty()) throw value_error("empty validation history");
  EarlyStopper es{patience, min_delta};
  bool stop = false;
  for (std::size_t e = 0; e < val_history.size(); ++e)
    stop = es.update(val_history[e], static_cast<int>(e) + 1);
  return stop;
}

// --------------------------------------------------------------------------
// Losses shared by stages
// --------------------------------------------------------------------------

// w1 L_pp + w2 L_f + w3 (L_si + chi penalty)
inline Tensor compound_loss(const Tensor& l_pp, const Tensor& l_f,
                            const Tensor& l_si, const Tensor& chi_penalty,
                            double w1, double w2, double w3) {
  if (w1 < 0 || w2 < 0 || w3 < 0)
    throw value_error("compound loss weights must be >= 0");
  return add(add(l_pp * w1, l_f * w2), add(l_si, chi_penalty) * w3);
}

inline Tensor mean_stream_loss(const std::vector<Tensor>& stream_probs,
                               const Tensor& y, const ClassStats& stats) {
  Tensor acc = weighted_l2_loss(stream_probs[0], y, stats);
  for (std::size_t i = 1; i < stream_probs.size(); ++i)
    acc = add(acc, weighted_l2_loss(stream_probs[i], y, stats));
  return acc * (1.0 / static_cast<double>(stream_probs.size()));
}

// --------------------------------------------------------------------------
// Staged training
// --------------------------------------------------------------------------

struct HistoryRow {
  int stage = 0;
  int stream = -1;  // stage 1 only
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_l_pp = std::numeric_limits<double>::quiet_NaN();
  double val_l_f = std::numeric_limits<double>::quiet_NaN();
  double val_l_si = std::numeric_limits<double>::quiet_NaN();
};

struct TrainRunResult {
  std::vector<HistoryRow> history;
  std::map<std::string, AdamState> adam;  // state of the last stage
  int last_stage = 0;
};

namespace detail_train {

struct Snapshot {
  std::vector<std::vector<double>> values;
  std::vector<BatchNormState> states;
};

inline Snapshot take_snapshot(std::vector<NamedTensor>& params,
                              DsinModel& model) {
  Snapshot s;
  for (auto& nt : params) s.values.push_back(nt.tensor.values());
  for (auto& [name, st] : model.bn_states()) s.states.push_back(*st);
  return s;
}

inline void restore_snapshot(const Snapshot& s,
                             std::vector<NamedTensor>& params,
                             DsinModel& model) {
  for (std::size_t i = 0; i < s.values.size(); ++i)
    params[i].tensor.values() = s.values[i];
  auto states = model.bn_states();
  for (std::size_t i = 0; i < states.size(); ++i) *states[i].second = s.states[i];
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n,
                                                 RngStream rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[rng.uniform_int(static_cast<int>(i))]);
  return idx;
}

inline std::vector<NamedTensor> pi_block(DsinModel& model,
                                         const TrainConfig& cfg, int stream) {
  if (stream >= 0)
    return cfg.freeze_conv ? model.pi_fc_params(stream)
                           : model.pi_params(stream);
  std::vector<NamedTensor> out;
  for (int i = 0; i < model.n_streams(); ++i) {
    auto s = cfg.freeze_conv ? model.pi_fc_params(i) : model.pi_params(i);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

inline std::vector<NamedTensor> trainable_for_stage(DsinModel& model,
                                                    const TrainConfig& cfg,
                                                    int stage, int stream) {
  switch (stage) {
    case 1: return pi_block(model, cfg, stream);
    case 2: return model.phi_params();
    case 3: {
      auto out = pi_block(model, cfg, -1);
      auto f = model.phi_params();
      out.insert(out.end(), f.begin(), f.end());
      return out;
    }
    case 4: return model.omega_params();
    default: {
      auto out = pi_block(model, cfg, -1);
      auto f = model.phi_params();
      auto o = model.omega_params();
      out.insert(out.end(), f.begin(), f.end());
      out.insert(out.end(), o.begin(), o.end());
      return out;
    }
  }
}

// Frozen patch CNNs run in inference mode so their running statistics stay
// bitwise intact; trainable ones run on batch statistics.
inline bool pi_trains(const TrainConfig& cfg, int stage) {
  return (stage == 1 || stage == 3 || stage == 5) && !cfg.freeze_conv;
}

struct ValLosses {
  double stage_loss = 0;
  double l_pp = std::numeric_limits<double>::quiet_NaN();
  double l_f = std::numeric_limits<double>::quiet_NaN();
  double l_si = std::numeric_limits<double>::quiet_NaN();
};

inline Tensor stage_train_loss(DsinModel& model, const Dataset& ds,
                               const std::vector<std::size_t>& chunk,
                               const ClassStats& stats, const TrainConfig& cfg,
                               int stage, int stream, BnMode pi_mode) {
  Tensor y = make_label_batch(ds, chunk);
  if (stage == 1) {
    Tensor x = make_stream_batch(ds, chunk, stream);
    Tensor p = model.forward_stream(stream, x, pi_mode, pi_mode == BnMode::train);
    return weighted_l2_loss(p, y, stats);
  }
  std::vector<Tensor> xs;
  for (int i = 0; i < model.n_streams(); ++i)
    xs.push_back(make_stream_batch(ds, chunk, i));
  const bool track = pi_mode == BnMode::train;
  const int T = (stage == 2 || stage == 3) ? 0 : cfg.T;
  DsinModel::Heads h = model.forward(xs, pi_mode, track, T);
  switch (stage) {
    case 2: return bce_loss(h.f, y);
    case 3: return add(mean_stream_loss(h.p, y, stats), bce_loss(h.f, y));
    case 4:
      return add(bce_loss(h.yhat, y), chi_regularizer(h.trace, cfg.r));
    default:
      return compound_loss(mean_stream_loss(h.p, y, stats), bce_loss(h.f, y),
                           bce_loss(h.yhat, y), chi_regularizer(h.trace, cfg.r),
                           cfg.w1, cfg.w2, cfg.w3);
  }
}

inline ValLosses eval_val_losses(DsinModel& model, const Dataset& val,
                                 const ClassStats& stats,
                                 const TrainConfig& cfg, int stage,
                                 int stream) {
  NoGradGuard ng;
  ValLosses out;
  double stage_acc = 0, pp_acc = 0, f_acc = 0, si_acc = 0, chi_acc = 0;
  std::size_t seen = 0;
  std::vector<std::size_t> idx(val.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t start = 0; start < idx.size();
       start += static_cast<std::size_t>(cfg.batch)) {
    std::vector<std::size_t> chunk(
        idx.begin() + start,
        idx.begin() + std::min(idx.size(),
                               start + static_cast<std::size_t>(cfg.batch)));
    const double w = static_cast<double>(chunk.size());
    Tensor y = make_label_batch(val, chunk);
    if (stage == 1) {
      Tensor x = make_stream_batch(val, chunk, stream);
      Tensor p = model.forward_stream(stream, x, BnMode::infer);
      const double l = weighted_l2_loss(p, y, stats).item();
      stage_acc += l * w;
      pp_acc += l * w;
    } else {
      std::vector<Tensor> xs;
      for (int i = 0; i < model.n_streams(); ++i)
        xs.push_back(make_stream_batch(val, chunk, i));
      DsinModel::Heads h = model.forward(xs, BnMode::infer, false, cfg.T);
      const double l_pp = mean_stream_loss(h.p, y, stats).item();
      const double l_f = bce_loss(h.f, y).item();
      const double l_si = bce_loss(h.yhat, y).item();
      const double l_chi = chi_regularizer(h.trace, cfg.r).item();
      pp_acc += l_pp * w;
      f_acc += l_f * w;
      si_acc += l_si * w;
      chi_acc += l_chi * w;
      switch (stage) {
        case 2: stage_acc += l_f * w; break;
        case 3: stage_acc += (l_pp + l_f) * w; break;
        case 4: stage_acc += (l_si + l_chi) * w; break;
        default:
          stage_acc +=
              (cfg.w1 * l_pp + cfg.w2 * l_f + cfg.w3 * (l_si + l_chi)) * w;
      }
    }
    seen += chunk.size();
  }
  out.stage_loss = stage_acc / static_cast<double>(seen);
  out.l_pp = pp_acc / static_cast<double>(seen);
  if (stage != 1) {
    out.l_f = f_acc / static_cast<double>(seen);
    out.l_si = si_acc / static_cast<double>(seen);
  }
  return out;
}

inline void run_stage(DsinModel& model, const Dataset& train,
                      const Dataset& val, const ClassStats& stats,
                      const TrainConfig& cfg, int stage, int stream,
                      std::vector<HistoryRow>& history,
                      std::map<std::string, AdamState>& adam_out) {
  auto trainable = trainable_for_stage(model, cfg, stage, stream);
  auto all = model.all_params();
  for (auto& nt : all) nt.tensor.set_requires_grad(false);
  for (auto& nt : trainable) nt.tensor.set_requires_grad(true);

  const BnMode pi_mode = pi_trains(cfg, stage) ? BnMode::train : BnMode::infer;
  std::map<std::string, AdamState> adam;
  EarlyStopper stopper{cfg.patience, cfg.min_delta};
  Snapshot best = take_snapshot(trainable, model);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto idx = shuffled_indices(
        train.size(),
        derive_stream(cfg.seed, {0xE9, static_cast<std::uint64_t>(stage),
                                 static_cast<std::uint64_t>(stream + 1),
                                 static_cast<std::uint64_t>(epoch)}));
    double loss_acc = 0;
    for (std::size_t start = 0; start < idx.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      std::vector<std::size_t> chunk(
          idx.begin() + start,
          idx.begin() + std::min(idx.size(),
                                 start + static_cast<std::size_t>(cfg.batch)));
      Tensor loss = stage_train_loss(model, train, chunk, stats, cfg, stage,
                                     stream, pi_mode);
      loss_acc += loss.item() * static_cast<double>(chunk.size());
      zero_grads(trainable);
      backward(loss);
      adam_step(trainable, adam, cfg.lr);
    }
    ValLosses vl = eval_val_losses(model, val, stats, cfg, stage, stream);
    HistoryRow row;
    row.stage = stage;
    row.stream = stream;
    row.epoch = epoch;
    row.train_loss = loss_acc / static_cast<double>(train.size());
    row.val_loss = vl.stage_loss;
    row.val_l_pp = vl.l_pp;
    row.val_l_f = vl.l_f;
    row.val_l_si = vl.l_si;
    history.push_back(row);

    const bool stop = stopper.update(vl.stage_loss, epoch);
    if (stopper.best_epoch == epoch) best = take_snapshot(trainable, model);
    if (stop) break;
  }
  restore_snapshot(best, trainable, model);
  adam_out = std::move(adam);
}

}  // namespace detail_train

// Runs the requested stages in order on explicit train/validation splits.
// Stage 1 trains each patch stream independently; stages 2 and 4 freeze the
// upstream blocks; stage 5 optimizes the compound loss end to end.
inline TrainRunResult staged_train(DsinModel& model, const Dataset& train,
                                   const Dataset& val,
                                   const TrainConfig& cfg) {
  validate(cfg);
  if (train.size() == 0 || val.size() == 0)
    throw value_error("staged_train needs non-empty train and val splits");

  // Stages that run the patch CNNs frozen need their running statistics,
  // which only exist after a patch-training stage or a checkpoint resume.
  bool stats_ok = model.bn_initialized();
  for (int s : cfg.stages) {
    if ((s == 2 || s == 4) && !stats_ok)
      throw config_error(
          "stage " + std::to_string(s) +
          " runs the patch predictors frozen, but their statistics are "
          "uninitialized; run stage 1/3/5 first or resume a checkpoint");
    if (s == 1 || s == 3 || s == 5) {
      if (cfg.freeze_conv && !stats_ok)
        throw config_error(
            "freeze_conv requires resuming a checkpoint with initialized "
            "patch statistics");
      stats_ok = true;
    }
  }

  ClassStats stats = compute_class_stats(train, cfg.balancing);
  TrainRunResult res;
  for (int stage : cfg.stages) {
    if (stage == 1) {
      if (cfg.parallel_streams) {
        // Streams share no parameters; batch-norm states are per stream.
        std::vector<std::vector<HistoryRow>> hist(model.n_streams());
        std::vector<std::map<std::string, AdamState>> adams(model.n_streams());
        std::vector<std::future<void>> futs;
        for (int i = 0; i < model.n_streams(); ++i)
          futs.push_back(std::async(std::launch::async, [&, i]() {
            detail_train::run_stage(model, train, val, stats, cfg, 1, i,
                                    hist[i], adams[i]);
          }));
        for (auto& f : futs) f.get();
        for (int i = 0; i < model.n_streams(); ++i) {
          res.history.insert(res.history.end(), hist[i].begin(),
                             hist[i].end());
          for (auto& [k, v] : adams[i]) res.adam[k] = std::move(v);
        }
      } else {
        for (int i = 0; i < model.n_streams(); ++i) {
          std::map<std::string, AdamState> adam;
          detail_train::run_stage(model, train, val, stats, cfg, 1, i,
                                  res.history, adam);
          for (auto& [k, v] : adam) res.adam[k] = std::move(v);
        }
      }
    } else {
      std::map<std::string, AdamState> adam;
      detail_train::run_stage(model, train, val, stats, cfg, stage, -1,
                              res.history, adam);
      res.adam = std::move(adam);
    }
    res.last_stage = stage;
  }
  return res;
}

// --------------------------------------------------------------------------
// Checkpoints: versioned binary container of named tensor blocks plus
// batch-norm states, Adam moments, and the config hash.
// --------------------------------------------------------------------------

struct CheckpointMeta {
  int version = 1;
  int stage = 0;
  std::uint64_t config_hash = 0;
  ModelConfig model;
};

namespace detail_train {
constexpr char kCkptMagic[8] = {'D', 'S', 'I', 'N', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kEndMarker = 0x0D51FEEDu;
}  // namespace detail_train

inline void save_checkpoint(DsinModel& model,
                            const std::map<std::string, AdamState>& adam,
                            const CheckpointMeta& meta,
                            const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot write checkpoint " + path.string());
    os.write(detail_train::kCkptMagic, 8);
    io::write_u32(os, static_cast<std::uint32_t>(meta.version));
    io::write_u32(os, static_cast<std::uint32_t>(meta.stage));
    io::write_u64(os, meta.config_hash);
    const ModelConfig& mc = meta.model;
    io::write_u32(os, static_cast<std::uint32_t>(mc.n_labels));
    io::write_u32(os, static_cast<std::uint32_t>(mc.streams.size()));
    for (const auto& g : mc.streams) {
      io::write_u32(os, static_cast<std::uint32_t>(g.h));
      io::write_u32(os, static_cast<std::uint32_t>(g.w));
      io::write_u32(os, static_cast<std::uint32_t>(g.c));
    }
    io::write_u32(os, static_cast<std::uint32_t>(mc.fusion_hidden));
    io::write_u32(os, static_cast<std::uint32_t>(mc.T));
    std::uint32_t flags = 0;
    if (mc.si.correction_factors) flags |= 1;
    if (mc.si.include_self) flags |= 2;
    io::write_u32(os, flags);

    auto params = model.all_params();
    io::write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (auto& nt : params) {
      io::write_string(os, nt.name);
      io::write_tensor_block(os, nt.tensor.shape(), nt.tensor.values());
    }
    auto states = model.bn_states();
    io::write_u32(os, static_cast<std::uint32_t>(states.size()));
    for (auto& [name, st] : states) {
      io::write_string(os, name);
      io::write_u64(os, static_cast<std::uint64_t>(st->batches_seen));
      io::write_u32(os, static_cast<std::uint32_t>(st->running_mean.size()));
      for (double v : st->running_mean) io::write_f64(os, v);
      for (double v : st->running_var) io::write_f64(os, v);
    }
    io::write_u32(os, static_cast<std::uint32_t>(adam.size()));
    for (const auto& [name, st] : adam) {
      io::write_string(os, name);
      io::write_u64(os, static_cast<std::uint64_t>(st.t));
      io::write_u32(os, static_cast<std::uint32_t>(st.m.size()));
      for (double v : st.m) io::write_f64(os, v);
      for (double v : st.v) io::write_f64(os, v);
    }
    io::write_u32(os, detail_train::kEndMarker);
    if (!os) throw io_error("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

struct LoadedCheckpoint {
  CheckpointMeta meta;
  DsinModel model;
  std::map<std::string, AdamState> adam;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, detail_train::kCkptMagic, 8) != 0)
    throw io_error("not a checkpoint file: " + path.string());
  LoadedCheckpoint out;
  out.meta.version = static_cast<int>(io::read_u32(is));
  if (out.meta.version != 1)
    throw io_error("unsupported checkpoint version " +
                   std::to_string(out.meta.version));
  out.meta.stage = static_cast<int>(io::read_u32(is));
  out.meta.config_hash = io::read_u64(is);
  ModelConfig mc;
  mc.n_labels = static_cast<int>(io::read_u32(is));
  const std::uint32_t n_streams = io::read_u32(is);
  if (n_streams == 0 || n_streams > 64)
    throw io_error("implausible stream count in checkpoint");
  for (std::uint32_t i = 0; i < n_streams; ++i) {
    StreamGeometry g;
    g.h = static_cast<int>(io::read_u32(is));
    g.w = static_cast<int>(io::read_u32(is));
    g.c = static_cast<int>(io::read_u32(is));
    mc.streams.push_back(g);
  }
  mc.fusion_hidden = static_cast<int>(io::read_u32(is));
  mc.T = static_cast<int>(io::read_u32(is));
  const std::uint32_t flags = io::read_u32(is);
  mc.si.correction_factors = flags & 1;
  mc.si.include_self = flags & 2;
  out.meta.model = mc;

  DsinModel model(mc, 0);
  std::map<std::string, Tensor> have;
  for (auto& nt : model.all_params()) have.emplace(nt.name, nt.tensor);

  const std::uint32_t n_params = io::read_u32(is);
  if (n_params != have.size())
    throw io_error("checkpoint has " + std::to_string(n_params) +
                   " parameter blocks, model expects " +
                   std::to_string(have.size()));
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const std::string name = io::read_string(is);
    std::vector<int> shape;
    std::vector<double> vals;
    io::read_tensor_block(is, shape, vals);
    auto it = have.find(name);
    if (it == have.end())
      throw io_error("unexpected parameter block '" + name + "'");
    if (shape != it->second.shape())
      throw io_error("parameter " + name + " has shape " + shape_str(shape) +
                     ", model expects " + shape_str(it->second.shape()));
    it->second.values() = std::move(vals);
  }

  auto states = model.bn_states();
  const std::uint32_t n_states = io::read_u32(is);
  if (n_states != states.size())
    throw io_error("checkpoint batch-norm state count mismatch");
  for (std::uint32_t i = 0; i < n_states; ++i) {
    const std::string name = io::read_string(is);
    if (name != states[i].first)
      throw io_error("batch-norm state order mismatch at " + name);
    BatchNormState* st = states[i].second;
    st->batches_seen = static_cast<std::int64_t>(io::read_u64(is));
    const std::uint32_t c = io::read_u32(is);
    st->running_mean.assign(c, 0.0);
    st->running_var.assign(c, 0.0);
    for (std::uint32_t k = 0; k < c; ++k) st->running_mean[k] = io::read_f64(is);
    for (std::uint32_t k = 0; k < c; ++k) st->running_var[k] = io::read_f64(is);
  }

  const std::uint32_t n_adam = io::read_u32(is);
  if (n_adam > have.size()) throw io_error("implausible Adam block count");
  for (std::uint32_t i = 0; i < n_adam; ++i) {
    const std::string name = io::read_string(is);
    AdamState st;
    st.t = static_cast<std::int64_t>(io::read_u64(is));
    const std::uint32_t n = io::read_u32(is);
    st.m.assign(n, 0.0);
    st.v.assign(n, 0.0);
    for (std::uint32_t k = 0; k < n; ++k) st.m[k] = io::read_f64(is);
    for (std::uint32_t k = 0; k < n; ++k) st.v[k] = io::read_f64(is);
    out.adam.emplace(name, std::move(st));
  }

  if (io::read_u32(is) != detail_train::kEndMarker)
    throw io_error("checkpoint end marker missing (truncated or corrupt)");
  is.peek();
  if (!is.eof())
    throw io_error("trailing bytes after checkpoint end marker");
  out.model = std::move(model);
  return out;
}

// Tabular history: one file per stage next to the checkpoint.
inline void write_history(const std::vector<HistoryRow>& history,
                          const std::filesystem::path& dir) {
  std::map<int, std::vector<const HistoryRow*>> by_stage;
  for (const auto& row : history) by_stage[row.stage].push_back(&row);
  for (auto& [stage, rows] : by_stage) {
    std::ofstream os(dir / ("history_stage" + std::to_string(stage) + ".tsv"),
                     std::ios::binary);
    os << "stage\tstream\tepoch\ttrain_loss\tval_loss\tval_l_pp\tval_l_f\t"
          "val_l_si\n";
    os.precision(12);
    for (const HistoryRow* r : rows) {
      os << r->stage << '\t' << r->stream << '\t' << r->epoch << '\t'
         << r->train_loss << '\t' << r->val_loss << '\t' << r->val_l_pp
         << '\t' << r->val_l_f << '\t' << r->val_l_si << '\n';
    }
  }
}

}  // namespace dsin

#endif  // DSIN_TRAINING_HPP
