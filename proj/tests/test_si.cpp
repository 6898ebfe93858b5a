#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "dsin/fusion.hpp"
#include "dsin/grad_check.hpp"
#include "dsin/rng.hpp"
#include "dsin/structure_inference.hpp"
#include "oracles.hpp"

using namespace dsin;

namespace {

void fill_const(Tensor& t, double v) {
  std::fill(t.values().begin(), t.values().end(), v);
}

SIUParams const_params(int n, double v) {
  RngStream rng(0);
  SIUParams p = SIUParams::init(n, rng);
  std::vector<NamedTensor> all;
  p.collect_params("w", all);
  for (auto& nt : all) fill_const(nt.tensor, v);
  return p;
}

SIUParams random_params(int n, std::uint64_t seed, double scale = 1.0) {
  RngStream rng(seed);
  SIUParams p = SIUParams::init(n, rng);
  std::vector<NamedTensor> all;
  p.collect_params("w", all);
  for (auto& nt : all)
    for (double& v : nt.tensor.values()) v = rng.uniform(-scale, scale);
  return p;
}

// Convert vectorized parameters to the oracle's per-unit scalar layout.
std::vector<oracle::SiuScalarParams> to_scalar(const SIUParams& p) {
  const int n = p.n_labels();
  std::vector<oracle::SiuScalarParams> out(n);
  for (int j = 0; j < n; ++j) {
    out[j].wm[0] = p.wm_mu.values()[j];
    out[j].wm[1] = p.wm_f.values()[j];
    out[j].wm[2] = p.wm_y.values()[j];
    out[j].bm = p.bm.values()[j];
    out[j].wg[0] = p.wg_mu.values()[j];
    out[j].wg[1] = p.wg_f.values()[j];
    out[j].wg[2] = p.wg_y.values()[j];
    out[j].bg = p.bg.values()[j];
    out[j].wy[0] = p.wy_mu.values()[j];
    out[j].wy[1] = p.wy_f.values()[j];
    out[j].by = p.by.values()[j];
  }
  return out;
}

}  // namespace

TEST_CASE("si_init seeds state with the fused prediction") {
  Tensor f = Tensor::from({1, 2}, {0.8, 0.2});
  SIState s = si_init(f);
  CHECK(s.m.values() == f.values());
  CHECK(s.yhat.values() == f.values());
  CHECK(s.t == 0);

  Tensor half = Tensor::filled({2, 3}, 0.5);
  SIState s2 = si_init(half);
  for (double v : s2.m.values()) CHECK(v == 0.5);

  // degenerate N = 1 is valid
  CHECK_NOTHROW(si_init(Tensor::from({1, 1}, {0.4})));

  CHECK_THROWS_AS(si_init(Tensor::from({1, 2}, {0.0, 0.5})), value_error);
}

TEST_CASE("zero parameters drive every stage to 0.5") {
  Tensor f = Tensor::from({2, 3}, {0.9, 0.1, 0.4, 0.3, 0.6, 0.7});
  SIUParams p = const_params(3, 0.0);
  SIState st = si_init(f);
  Tensor m = compute_messages(st, p);
  for (double v : m.values()) CHECK(v == doctest::Approx(0.5));
  Tensor chi = compute_correction_factors(m, st, p);
  for (double v : chi.values()) CHECK(v == doctest::Approx(0.5));
  Tensor y = compute_predictions(m, chi, f, p);
  for (double v : y.values()) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("worked two-unit trace with unit weights") {
  Tensor f = Tensor::from({1, 2}, {0.8, 0.2});
  SIUParams p = const_params(2, 1.0);
  fill_const(p.bm, 0.0);
  fill_const(p.bg, 0.0);
  fill_const(p.by, 0.0);

  SIResult res = si_unroll(f, p, 1);
  REQUIRE(res.trace.m.size() == 1);
  CHECK(res.trace.m[0].values()[0] == doctest::Approx(0.8909).epsilon(5e-4));
  CHECK(res.trace.m[0].values()[1] == doctest::Approx(0.7110).epsilon(5e-4));
  CHECK(res.trace.chi[0].values()[0] ==
        doctest::Approx(0.9169).epsilon(5e-4));
  CHECK(res.trace.chi[0].values()[1] ==
        doctest::Approx(0.7687).epsilon(5e-4));
  CHECK(res.yhat.values()[0] == doctest::Approx(0.8188).epsilon(5e-4));

  // gated message matrix entries from the value-level helper
  auto mbar = gate_messages(
      {res.trace.m[0].values()[0], res.trace.m[0].values()[1]},
      {res.trace.chi[0].values()[0], res.trace.chi[0].values()[1]});
  CHECK(mbar[1 * 2 + 0] == doctest::Approx(0.5992).epsilon(5e-4));  // 2 -> 1
  CHECK(mbar[0 * 2 + 0] == doctest::Approx(0.8168).epsilon(5e-4));  // self
}

TEST_CASE("message saturation and gate limits") {
  Tensor f = Tensor::from({1, 2}, {0.8, 0.2});
  SIUParams p = const_params(2, 0.0);
  fill_const(p.bm, 10.0);
  SIState st = si_init(f);
  Tensor m = compute_messages(st, p);
  for (double v : m.values())
    CHECK(v == doctest::Approx(0.9999546).epsilon(1e-4));

  // fully open gates pass the raw message; closed gates kill it
  auto open_gate = gate_messages({0.3, 0.7}, {1.0, 1.0});
  CHECK(open_gate[0 * 2 + 1] == doctest::Approx(0.3));
  CHECK(open_gate[1 * 2 + 0] == doctest::Approx(0.7));
  auto closed = gate_messages({0.3, 0.7}, {0.0, 0.0});
  for (double v : closed) CHECK(v == 0.0);
}

TEST_CASE("closed gates reduce predictions to a per-node function of f") {
  const int N = 4;
  Tensor f = Tensor::from({1, N}, {0.2, 0.4, 0.6, 0.8});
  SIUParams p = random_params(N, 77);
  fill_const(p.bg, -40.0);  // drives every chi to ~0
  SIResult res = si_unroll(f, p, 3);
  for (int j = 0; j < N; ++j) {
    const double expect = sigmoid_scalar(p.wy_f.values()[j] * f.values()[j] +
                                         p.by.values()[j]);
    CHECK(res.yhat.values()[j] == doctest::Approx(expect).epsilon(1e-5));
  }
}

TEST_CASE("T = 0 returns the fused input unchanged") {
  Tensor f = Tensor::from({2, 2}, {0.1, 0.9, 0.5, 0.6});
  SIUParams p = random_params(2, 5);
  SIResult res = si_unroll(f, p, 0);
  CHECK(res.yhat.values() == f.values());
  CHECK(res.trace.m.empty());
}

TEST_CASE("vectorized unroll equals the naive per-edge loop") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    RngStream rng(seed * 31 + 7);
    const int N = 1 + rng.uniform_int(12);
    const int T = rng.uniform_int(11);
    const int B = 1 + rng.uniform_int(3);
    SIUParams p = random_params(N, seed + 1000);
    std::vector<double> fv(static_cast<std::size_t>(B) * N);
    for (double& v : fv) v = rng.uniform(0.02, 0.98);
    Tensor f = Tensor::from({B, N}, fv);

    SIOptions opts;
    opts.correction_factors = seed % 3 != 2;
    opts.include_self = N == 1 || seed % 2 == 0;
    SIResult res = si_unroll(f, p, T, opts);

    auto sp = to_scalar(p);
    for (int b = 0; b < B; ++b) {
      std::vector<double> frow(fv.begin() + static_cast<std::size_t>(b) * N,
                               fv.begin() + static_cast<std::size_t>(b + 1) * N);
      auto want = oracle::si_unroll_naive(frow, sp, T, opts.correction_factors,
                                          opts.include_self);
      for (int j = 0; j < N; ++j)
        CHECK(std::fabs(res.yhat.values()[static_cast<std::size_t>(b) * N + j] -
                        want[j]) < 1e-10);
    }
  }
}

TEST_CASE("every state variable stays strictly inside (0,1)") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RngStream rng(seed);
    const int N = 6;
    SIUParams p = random_params(N, seed, 8.0);  // extreme weights
    std::vector<double> fv(N);
    for (double& v : fv) v = rng.uniform(0.01, 0.99);
    SIResult res = si_unroll(Tensor::from({1, N}, fv), p, 5);
    for (const auto& coll : {res.trace.m, res.trace.chi, res.trace.yhat})
      for (const Tensor& t : coll)
        for (double v : t.values()) {
          CHECK(v > 0.0);
          CHECK(v < 1.0);
        }
  }
}

TEST_CASE("permutation equivariance of the unroll") {
  const int N = 5, T = 4;
  RngStream rng(91);
  SIUParams p = random_params(N, 13);
  std::vector<double> fv(N);
  for (double& v : fv) v = rng.uniform(0.05, 0.95);
  SIResult base = si_unroll(Tensor::from({1, N}, fv), p, T);

  std::vector<int> perm(N);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = N; i > 1; --i)
    std::swap(perm[i - 1], perm[rng.uniform_int(i)]);

  // permute f and every per-unit parameter consistently
  SIUParams pp = random_params(N, 13);
  std::vector<NamedTensor> src, dst;
  p.collect_params("w", src);
  pp.collect_params("w", dst);
  std::vector<double> pf(N);
  for (int j = 0; j < N; ++j) {
    pf[j] = fv[perm[j]];
    for (std::size_t k = 0; k < src.size(); ++k)
      dst[k].tensor.values()[j] = src[k].tensor.values()[perm[j]];
  }
  SIResult permuted = si_unroll(Tensor::from({1, N}, pf), pp, T);
  for (int j = 0; j < N; ++j)
    CHECK(permuted.yhat.values()[j] ==
          doctest::Approx(base.yhat.values()[perm[j]]).epsilon(1e-12));
}

TEST_CASE("chi regularizer arithmetic") {
  SITrace tr;
  tr.chi = {Tensor::filled({2, 3}, 0.5), Tensor::filled({2, 3}, 0.5)};
  CHECK(chi_regularizer(tr, 5e-3).item() == doctest::Approx(0.0025));
  CHECK(chi_regularizer(tr, 0.0).item() == 0.0);

  SITrace halved;
  halved.chi = {Tensor::filled({2, 3}, 0.25), Tensor::filled({2, 3}, 0.25)};
  CHECK(chi_regularizer(halved, 5e-3).item() ==
        doctest::Approx(0.5 * chi_regularizer(tr, 5e-3).item()));
}

TEST_CASE("unroll gradients match finite differences for T in {1,5,10}") {
  for (int T : {1, 5, 10}) {
    RngStream rng(T);
    const int N = 4, B = 2;
    SIUParams p = random_params(N, T * 17 + 1);
    std::vector<double> fv(static_cast<std::size_t>(B) * N);
    for (double& v : fv) v = rng.uniform(0.1, 0.9);
    std::vector<double> yv(static_cast<std::size_t>(B) * N);
    for (double& v : yv) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    Tensor y = Tensor::from({B, N}, yv);

    std::vector<NamedTensor> named;
    p.collect_params("omega", named);
    std::vector<Tensor> params;
    for (auto& nt : named) params.push_back(nt.tensor);

    auto loss = [&]() {
      Tensor f = Tensor::from({B, N}, fv);
      SIResult res = si_unroll(f, p, T);
      return add(bce_loss(res.yhat, y),
                 chi_regularizer(res.trace, 5e-3));
    };
    CHECK(grad_check(loss, params, 1e-5) < 1e-4);
  }
}
