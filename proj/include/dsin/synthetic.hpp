#ifndef DSIN_SYNTHETIC_HPP
#define DSIN_SYNTHETIC_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dsin/data.hpp"
#include "dsin/errors.hpp"
#include "dsin/rng.hpp"
#include "dsin/tensor.hpp"

namespace dsin {

// Desk-scale stand-in for the AU datasets: labels are drawn from a pairwise
// binary Markov random field fitted to requested marginals and correlations,
// and each active label renders a distinct glyph into its own face region, so
// patch predictors see only partial evidence while the label correlations
// carry exploitable signal.
struct SyntheticSpec {
  int n_labels = 0;
  std::vector<double> correlations;    // N*N row-major, symmetric, unit diag
  std::vector<double> target_rho;      // N, strictly inside (0,1)
  double glyph_noise = 0.25;           // std of additive pixel noise
  std::vector<double> glyph_contrast;  // per label in (0,1]; empty = all 1
  int subjects = 6;
  int samples_per_subject = 100;
  int image_size = 48;                 // square face canvas
  int patch_size = 16;
  bool include_face = false;           // append the whole canvas as a stream
  // Render even ("anchor") labels into two neighboring patch slots at half
  // evidence each, so no single patch predictor sees a full glyph and
  // cross-patch pooling is required for a confident call.
  bool split_evidence = false;
  std::uint64_t seed = 0;
  std::vector<std::pair<int, int>> anchors;  // empty = derived slot layout
};

inline void validate(const SyntheticSpec& spec) {
  const int N = spec.n_labels;
  if (N < 1) throw value_error("synthetic spec needs n_labels >= 1");
  if (static_cast<int>(spec.target_rho.size()) != N)
    throw value_error("target_rho must have length N");
  for (double r : spec.target_rho)
    if (!(r > 0.0 && r < 1.0))
      throw value_error("target positive ratios must lie strictly in (0,1)");
  if (static_cast<int>(spec.correlations.size()) != N * N)
    throw value_error("correlation matrix must be N x N");
  for (int i = 0; i < N; ++i) {
    if (spec.correlations[i * N + i] != 1.0)
      throw value_error("correlation matrix diagonal must be 1");
    for (int j = 0; j < N; ++j) {
      const double c = spec.correlations[i * N + j];
      if (c < -1.0 || c > 1.0)
        throw value_error("correlations must lie in [-1,1]");
      if (std::fabs(c - spec.correlations[j * N + i]) > 1e-12)
        throw value_error("correlation matrix must be symmetric");
    }
  }
  if (!spec.glyph_contrast.empty() &&
      static_cast<int>(spec.glyph_contrast.size()) != N)
    throw value_error("glyph_contrast must be empty or length N");
  if (spec.glyph_noise < 0) throw value_error("glyph_noise must be >= 0");
  if (spec.subjects < 1 || spec.samples_per_subject < 1)
    throw value_error("need at least one subject and one sample per subject");
  if (spec.patch_size < 8 || spec.image_size < spec.patch_size)
    throw value_error("bad image/patch geometry");
}

// Pairwise binary model: P(y) ~ exp(sum_j b_j y_j + sum_{i<j} J_ij y_i y_j).
struct PairwiseModel {
  int n = 0;
  std::vector<double> bias;      // N
  std::vector<double> coupling;  // N*N symmetric, zero diagonal
};

namespace detail_synth {

struct Moments {
  std::vector<double> first;   // E[y_j]
  std::vector<double> second;  // E[y_i y_j], i != j
};

// Exact moments by enumeration over all 2^N states.
inline Moments exact_moments(const PairwiseModel& m) {
  const int N = m.n;
  const std::uint32_t states = 1u << N;
  Moments out;
  out.first.assign(N, 0.0);
  out.second.assign(static_cast<std::size_t>(N) * N, 0.0);
  std::vector<int> active;
  active.reserve(N);
  double z = 0.0;
  std::vector<double> weight(states);
  for (std::uint32_t s = 0; s < states; ++s) {
    active.clear();
    double e = 0.0;
    for (int j = 0; j < N; ++j)
      if (s & (1u << j)) {
        e += m.bias[j];
        for (int i : active) e += m.coupling[static_cast<std::size_t>(i) * N + j];
        active.push_back(j);
      }
    weight[s] = std::exp(e);
    z += weight[s];
  }
  for (std::uint32_t s = 0; s < states; ++s) {
    const double p = weight[s] / z;
    active.clear();
    for (int j = 0; j < N; ++j)
      if (s & (1u << j)) active.push_back(j);
    for (std::size_t a = 0; a < active.size(); ++a) {
      out.first[active[a]] += p;
      for (std::size_t b = a + 1; b < active.size(); ++b) {
        out.second[static_cast<std::size_t>(active[a]) * N + active[b]] += p;
        out.second[static_cast<std::size_t>(active[b]) * N + active[a]] += p;
      }
    }
  }
  return out;
}

inline Moments sampled_moments(const PairwiseModel& m, RngStream& rng,
                               int n_samples, int sweeps) {
  const int N = m.n;
  Moments out;
  out.first.assign(N, 0.0);
  out.second.assign(static_cast<std::size_t>(N) * N, 0.0);
  std::vector<int> y(N);
  for (int s = 0; s < n_samples; ++s) {
    for (int j = 0; j < N; ++j) y[j] = rng.bernoulli(0.5);
    for (int t = 0; t < sweeps; ++t)
      for (int j = 0; j < N; ++j) {
        double field = m.bias[j];
        for (int i = 0; i < N; ++i)
          if (i != j && y[i])
            field += m.coupling[static_cast<std::size_t>(i) * N + j];
        y[j] = rng.bernoulli(sigmoid_scalar(field));
      }
    for (int j = 0; j < N; ++j)
      if (y[j]) {
        out.first[j] += 1.0;
        for (int i = j + 1; i < N; ++i)
          if (y[i]) {
            out.second[static_cast<std::size_t>(j) * N + i] += 1.0;
            out.second[static_cast<std::size_t>(i) * N + j] += 1.0;
          }
      }
  }
  for (double& v : out.first) v /= n_samples;
  for (double& v : out.second) v /= n_samples;
  return out;
}

inline double corr_from_moments(double mi, double mj, double mij) {
  const double si = std::sqrt(std::max(mi * (1 - mi), 1e-12));
  const double sj = std::sqrt(std::max(mj * (1 - mj), 1e-12));
  return (mij - mi * mj) / (si * sj);
}

}  // namespace detail_synth

// Moment matching by gradient ascent on biases and couplings. Targets on the
// boundary of the feasible set (|corr| -> 1) saturate at the coupling clip
// and come out within tolerance of the requested value.
inline PairwiseModel fit_pairwise_model(const SyntheticSpec& spec) {
  validate(spec);
  const int N = spec.n_labels;
  PairwiseModel m;
  m.n = N;
  m.bias.assign(N, 0.0);
  m.coupling.assign(static_cast<std::size_t>(N) * N, 0.0);
  for (int j = 0; j < N; ++j) {
    const double r = spec.target_rho[j];
    m.bias[j] = std::log(r / (1 - r));
  }

  // target second moments from requested correlations
  std::vector<double> target_m2(static_cast<std::size_t>(N) * N, 0.0);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      if (i == j) continue;
      const double ri = spec.target_rho[i], rj = spec.target_rho[j];
      const double cov = spec.correlations[static_cast<std::size_t>(i) * N + j] *
                         std::sqrt(ri * (1 - ri) * rj * (1 - rj));
      // clip into the Frechet bounds for a pair of Bernoullis
      const double lo = std::max(0.0, ri + rj - 1.0);
      const double hi = std::min(ri, rj);
      target_m2[static_cast<std::size_t>(i) * N + j] =
          std::min(hi, std::max(lo, ri * rj + cov));
    }

  const bool exact = N <= 16;
  RngStream fit_rng = derive_stream(spec.seed, {0xF17});
  const double clip = 30.0;
  const int max_iters = exact ? 8000 : 600;
  PairwiseModel best = m;
  double best_err = 1e30;
  for (int it = 0; it < max_iters; ++it) {
    detail_synth::Moments mm =
        exact ? detail_synth::exact_moments(m)
              : detail_synth::sampled_moments(m, fit_rng, 2000, 30);
    double err = 0.0;
    for (int j = 0; j < N; ++j)
      err = std::max(err, std::fabs(mm.first[j] - spec.target_rho[j]));
    for (int i = 0; i < N; ++i)
      for (int j = i + 1; j < N; ++j)
        err = std::max(err,
                       std::fabs(mm.second[static_cast<std::size_t>(i) * N + j] -
                                 target_m2[static_cast<std::size_t>(i) * N + j]));
    if (err < best_err) {
      best_err = err;
      best = m;
    }
    if (exact && err < 0.002) break;
    // decaying step keeps densely coupled (near-critical) fits from
    // oscillating around the optimum
    const double lr = 2.0 / (1.0 + static_cast<double>(it) / 300.0);
    for (int j = 0; j < N; ++j) {
      m.bias[j] += lr * (spec.target_rho[j] - mm.first[j]);
      m.bias[j] = std::min(clip, std::max(-clip, m.bias[j]));
    }
    for (int i = 0; i < N; ++i)
      for (int j = i + 1; j < N; ++j) {
        const std::size_t ij = static_cast<std::size_t>(i) * N + j;
        const std::size_t ji = static_cast<std::size_t>(j) * N + i;
        double upd = lr * (target_m2[ij] - mm.second[ij]);
        double v = std::min(clip, std::max(-clip, m.coupling[ij] + upd));
        m.coupling[ij] = v;
        m.coupling[ji] = v;
      }
  }
  m = best;

  // Pairs requested at |corr| ~ 1 need effectively infinite coupling; push
  // them to a deep clip while shifting biases to keep the achieved odds, so
  // disagreeing states become unobservable at any sample count.
  for (int i = 0; i < N; ++i)
    for (int j = i + 1; j < N; ++j) {
      const double want = spec.correlations[static_cast<std::size_t>(i) * N + j];
      if (std::fabs(want) < 0.995) continue;
      const std::size_t ij = static_cast<std::size_t>(i) * N + j;
      const std::size_t ji = static_cast<std::size_t>(j) * N + i;
      const double j_new = want > 0 ? 60.0 : -60.0;
      const double dj = j_new - m.coupling[ij];
      m.coupling[ij] = j_new;
      m.coupling[ji] = j_new;
      m.bias[i] -= dj / 2.0;
      m.bias[j] -= dj / 2.0;
    }

  // Post-fit audit against the *requested* moments (not the clipped ones).
  detail_synth::Moments mm = exact
                                 ? detail_synth::exact_moments(m)
                                 : detail_synth::sampled_moments(m, fit_rng,
                                                                 4000, 50);
  std::ostringstream bad;
  for (int j = 0; j < N; ++j)
    if (std::fabs(mm.first[j] - spec.target_rho[j]) > 0.02)
      bad << " rho[" << j << "] requested " << spec.target_rho[j]
          << " achieved " << mm.first[j] << ";";
  for (int i = 0; i < N; ++i)
    for (int j = i + 1; j < N; ++j) {
      const double want = spec.correlations[static_cast<std::size_t>(i) * N + j];
      const double got = detail_synth::corr_from_moments(
          mm.first[i], mm.first[j],
          mm.second[static_cast<std::size_t>(i) * N + j]);
      if (std::fabs(got - want) > 0.05)
        bad << " corr[" << i << "," << j << "] requested " << want
            << " achieved " << got << ";";
    }
  if (!bad.str().empty())
    throw generation_error(
        "correlation matrix not realizable by a pairwise binary model:" +
        bad.str());
  return m;
}

// One Gibbs draw: chain initialized from the independent marginals, then
// `sweeps` full passes of single-site conditional updates.
inline std::vector<int> gibbs_sample(const PairwiseModel& m,
                                     const std::vector<double>& init_rho,
                                     RngStream& rng, int sweeps = 128) {
  const int N = m.n;
  std::vector<int> y(N);
  for (int j = 0; j < N; ++j) y[j] = rng.bernoulli(init_rho[j]);
  for (int t = 0; t < sweeps; ++t)
    for (int j = 0; j < N; ++j) {
      double field = m.bias[j];
      for (int i = 0; i < N; ++i)
        if (i != j && y[i])
          field += m.coupling[static_cast<std::size_t>(i) * N + j];
      y[j] = rng.bernoulli(sigmoid_scalar(field));
    }
  return y;
}

namespace detail_synth {

constexpr int kStampHalf = 2;  // stamps are 5x5
constexpr double kStampAmplitude = 0.42;

// Distinct deterministic glyph per label: pattern family cycles with j,
// dominant color channel cycles with j as well.
inline double stamp_value(int label, int dy, int dx, int channel) {
  double v = 0.0;
  switch (label % 4) {
    case 0: v = (dy & 1) ? 1.0 : -1.0; break;                   // h-bars
    case 1: v = (dx & 1) ? 1.0 : -1.0; break;                   // v-bars
    case 2: v = ((dy + dx) & 1) ? 1.0 : -1.0; break;            // checker
    default: v = (dy * dy + dx * dx <= 4) ? 1.0 : -0.6; break;  // disk
  }
  const int dom = label % 3;
  return v * (channel == dom ? 1.0 : 0.35);
}

struct Layout {
  std::vector<std::pair<int, int>> anchors;  // patch centers
  // one or two render sites per label
  std::vector<std::vector<std::pair<int, int>>> stamp_centers;
};

// Patch slots tile the canvas; each slot hosts up to two label stamps placed
// on opposite corners of its center so a slot-sized crop sees exactly the
// stamps of its own labels. With split_evidence, even labels additionally
// stamp the top-right corner of the next slot.
inline Layout make_layout(const SyntheticSpec& spec) {
  const int S = spec.image_size, ps = spec.patch_size;
  const int per_side = S / ps;
  const int n_slots = per_side * per_side;
  const int need = (spec.n_labels + 1) / 2;
  if (need > n_slots)
    throw value_error("image of size " + std::to_string(S) +
                      " has room for " + std::to_string(2 * n_slots) +
                      " labels; increase image_size or shrink patch_size");
  Layout lay;
  const int off = ps / 4;
  auto slot_center = [&](int g) {
    const int gr = g / per_side, gc = g % per_side;
    return std::pair<int, int>{gr * ps + ps / 2, gc * ps + ps / 2};
  };
  for (int g = 0; g < need; ++g) {
    const auto [cy, cx] = slot_center(g);
    lay.anchors.emplace_back(cy, cx);
    std::vector<std::pair<int, int>> even_sites = {{cy - off, cx - off}};
    if (spec.split_evidence && need > 1) {
      const auto [ny, nx] = slot_center((g + 1) % need);
      even_sites.push_back({ny - off, nx + off - 1});
    }
    lay.stamp_centers.push_back(std::move(even_sites));
    if (2 * g + 1 < spec.n_labels)
      lay.stamp_centers.push_back({{cy + off - 1, cx + off - 1}});
  }
  return lay;
}

}  // namespace detail_synth

// Deterministic for a fixed seed: all randomness is drawn from per-sample and
// per-subject counter streams, so generation order does not matter.
inline Dataset generate_synthetic_dataset(const SyntheticSpec& spec) {
  validate(spec);
  PairwiseModel model = fit_pairwise_model(spec);
  detail_synth::Layout lay = spec.anchors.empty()
                                 ? detail_synth::make_layout(spec)
                                 : detail_synth::Layout{spec.anchors, {}};
  if (!spec.anchors.empty()) {
    detail_synth::Layout def = detail_synth::make_layout(spec);
    lay.stamp_centers = def.stamp_centers;
  }

  const int N = spec.n_labels, S = spec.image_size;
  std::vector<double> contrast = spec.glyph_contrast;
  if (contrast.empty()) contrast.assign(N, 1.0);

  CropSpec crop;
  crop.anchors = lay.anchors;
  crop.patch_size = spec.patch_size;
  crop.face_size = S;

  Dataset ds;
  ds.n_labels = N;
  const int P = static_cast<int>(lay.anchors.size());
  for (int p = 0; p < P; ++p)
    ds.streams.push_back({spec.patch_size, spec.patch_size, 3});
  if (spec.include_face) ds.streams.push_back({S, S, 3});

  std::size_t global = 0;
  for (int subj = 0; subj < spec.subjects; ++subj) {
    RngStream subj_rng = derive_stream(spec.seed, {3, static_cast<std::uint64_t>(subj)});
    // per-subject appearance jitter: stamp offset and gain per label
    std::vector<int> jit_y(N), jit_x(N);
    std::vector<double> gain(N);
    for (int j = 0; j < N; ++j) {
      jit_y[j] = subj_rng.uniform_int(3) - 1;
      jit_x[j] = subj_rng.uniform_int(3) - 1;
      gain[j] = subj_rng.uniform(0.85, 1.15);
    }
    char subj_name[16];
    std::snprintf(subj_name, sizeof subj_name, "s%02d", subj);

    for (int k = 0; k < spec.samples_per_subject; ++k, ++global) {
      RngStream label_rng =
          derive_stream(spec.seed, {1, static_cast<std::uint64_t>(global)});
      RngStream pix_rng =
          derive_stream(spec.seed, {2, static_cast<std::uint64_t>(global)});
      Sample s;
      char id[32];
      std::snprintf(id, sizeof id, "%s_%04d", subj_name, k);
      s.id = id;
      s.subject = subj_name;
      s.labels = gibbs_sample(model, spec.target_rho, label_rng);

      Tensor face = Tensor::filled({S, S, 3}, 0.5);
      auto& fv = face.values();
      for (int j = 0; j < N; ++j) {
        if (!s.labels[j]) continue;
        for (const auto& [cy, cx] : lay.stamp_centers[j]) {
          // independent per-site amplitude and placement jitter; the
          // combined placement range +-2 keeps every stamp inside its host
          // patch window
          const double site_gain = pix_rng.uniform(0.65, 1.35);
          const int yy = cy + jit_y[j] + pix_rng.uniform_int(3) - 1;
          const int xx = cx + jit_x[j] + pix_rng.uniform_int(3) - 1;
          for (int dy = -detail_synth::kStampHalf;
               dy <= detail_synth::kStampHalf; ++dy)
            for (int dx = -detail_synth::kStampHalf;
                 dx <= detail_synth::kStampHalf; ++dx) {
              const int y = yy + dy, x = xx + dx;
              if (y < 0 || y >= S || x < 0 || x >= S) continue;
              for (int c = 0; c < 3; ++c)
                fv[(static_cast<std::size_t>(y) * S + x) * 3 + c] +=
                    detail_synth::kStampAmplitude * contrast[j] * gain[j] *
                    site_gain *
                    detail_synth::stamp_value(j, dy + detail_synth::kStampHalf,
                                              dx + detail_synth::kStampHalf,
                                              c);
            }
        }
      }
      if (spec.glyph_noise > 0)
        for (double& v : fv) v += spec.glyph_noise * pix_rng.normal();
      for (double& v : fv) v = std::min(1.0, std::max(0.0, v));

      s.patches = crop_patches(face, crop);
      if (spec.include_face) s.patches.push_back(face);
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

}  // namespace dsin

#endif  // DSIN_SYNTHETIC_HPP
