#include "doctest.h"
#include "dsin/fusion.hpp"
#include "dsin/grad_check.hpp"

using namespace dsin;

TEST_CASE("gather_au_scores column extraction") {
  Tensor p = Tensor::from({2, 2}, {0.1, 0.9, 0.3, 0.7});
  auto col = gather_au_scores(p, 1);
  CHECK(col == std::vector<double>{0.9, 0.7});
  CHECK_THROWS_AS(gather_au_scores(p, 2), value_error);

  // identical stream rows give identical column entries
  Tensor same = Tensor::from({3, 2}, {0.4, 0.6, 0.4, 0.6, 0.4, 0.6});
  auto c0 = gather_au_scores(same, 0);
  CHECK(c0[0] == c0[1]);
  CHECK(c0[1] == c0[2]);

  // batched variant: two streams of [B,N]
  Tensor s0 = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor s1 = Tensor::from({2, 3}, {7, 8, 9, 10, 11, 12});
  Tensor g = gather_au_scores(std::vector<Tensor>{s0, s1}, 2);
  CHECK(g.shape() == Shape{2, 2});
  CHECK(g.values() == std::vector<double>{3, 9, 6, 12});
}

TEST_CASE("fusion unit fixed points") {
  RngStream rng(1);
  FusionBank bank(3, 2, 64, rng);
  std::vector<NamedTensor> params;
  bank.collect_params("phi", params);
  for (auto& nt : params)
    for (double& v : nt.tensor.values()) v = 0.0;

  Tensor s = Tensor::from({1, 3}, {0.2, 0.9, 0.4});
  CHECK(bank.forward_unit(0, s).item() == doctest::Approx(0.5));

  // W1=0, b1 very negative, W2=0, b2=4 -> sigma(4)
  for (double& v : bank.units()[1].b1.values()) v = -40.0;
  bank.units()[1].b2.values()[0] = 4.0;
  CHECK(bank.forward_unit(1, s).item() == doctest::Approx(0.9820).epsilon(1e-4));

  // deterministic repeat
  CHECK(bank.forward_unit(1, s).item() == bank.forward_unit(1, s).item());
}

TEST_CASE("per-AU fusion independence") {
  RngStream rng(9);
  const int P = 4, N = 3;
  FusionBank bank(P, N, 16, rng);
  std::vector<Tensor> streams;
  RngStream data_rng(2);
  for (int i = 0; i < P; ++i) {
    std::vector<double> v(2 * N);
    for (double& x : v) x = data_rng.uniform(0.05, 0.95);
    streams.push_back(Tensor::from({2, N}, v));
  }
  Tensor before = bank.forward(streams);
  // zero out every unit except j=1
  for (int j = 0; j < N; ++j) {
    if (j == 1) continue;
    for (double& v : bank.units()[j].w1.values()) v = 0;
    for (double& v : bank.units()[j].b1.values()) v = 0;
    for (double& v : bank.units()[j].w2.values()) v = 0;
    for (double& v : bank.units()[j].b2.values()) v = 0;
  }
  Tensor after = bank.forward(streams);
  for (int b = 0; b < 2; ++b)
    CHECK(after.at({b, 1}) == doctest::Approx(before.at({b, 1})));
}

TEST_CASE("bce_loss values") {
  CHECK(bce_loss(Tensor::from({1, 1}, {0.5}), Tensor::from({1, 1}, {1})).item() ==
        doctest::Approx(0.6931).epsilon(1e-4));
  // perfect prediction at the clamp boundary
  CHECK(bce_loss(Tensor::from({1, 2}, {1.0, 0.0}),
                 Tensor::from({1, 2}, {1, 0}))
            .item() == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(bce_loss(Tensor::from({1, 2}, {0.9, 0.1}),
                 Tensor::from({1, 2}, {1, 0}))
            .item() == doctest::Approx(0.1054).epsilon(1e-3));
}

TEST_CASE("bce and fusion gradients match finite differences") {
  RngStream rng(3);
  Tensor logits = Tensor::param({2, 3}, uniform_init(6, rng, 1.5));
  Tensor y = Tensor::from({2, 3}, {1, 0, 1, 0, 0, 1});
  auto direct = [&]() { return bce_loss(sigmoid(logits), y); };
  CHECK(grad_check(direct, {logits}, 1e-5) < 1e-4);

  FusionBank bank(2, 2, 8, rng);
  std::vector<Tensor> streams = {
      Tensor::from({2, 2}, {0.2, 0.8, 0.4, 0.6}),
      Tensor::from({2, 2}, {0.7, 0.3, 0.5, 0.55})};
  Tensor y2 = Tensor::from({2, 2}, {1, 0, 1, 1});
  std::vector<NamedTensor> named;
  bank.collect_params("phi", named);
  std::vector<Tensor> params;
  for (auto& nt : named) params.push_back(nt.tensor);
  auto loss = [&]() { return bce_loss(bank.forward(streams), y2); };
  CHECK(grad_check(loss, params, 1e-5) < 1e-4);
}
