#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dsin/conv.hpp"
#include "dsin/grad_check.hpp"
#include "dsin/rng.hpp"
#include "dsin/serialize.hpp"
#include "dsin/tensor.hpp"

using namespace dsin;

TEST_CASE("affine basics") {
  Tensor x = Tensor::from({1, 2}, {1, 2});
  Tensor W = Tensor::from({2, 1}, {1, 1});
  Tensor b = Tensor::from({1}, {0});
  CHECK(affine(x, W, b).item() == doctest::Approx(3.0));

  Tensor I = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b2 = Tensor::from({2}, {0, 0});
  Tensor y = affine(x, I, b2);
  CHECK(y.at({0, 0}) == doctest::Approx(1.0));
  CHECK(y.at({0, 1}) == doctest::Approx(2.0));

  Tensor x3 = Tensor::from({1, 2}, {0.5, -0.5});
  Tensor W3 = Tensor::from({2, 2}, {2, 0, 0, 2});
  Tensor b3 = Tensor::from({2}, {1, 1});
  Tensor y3 = affine(x3, W3, b3);
  CHECK(y3.at({0, 0}) == doctest::Approx(2.0));
  CHECK(y3.at({0, 1}) == doctest::Approx(0.0));

  CHECK_THROWS_AS(affine(x, Tensor::from({3, 1}, {1, 1, 1}), b), shape_error);
}

TEST_CASE("conv2d examples") {
  // 1x1 input, 1x1 filter: scalar product
  Tensor x = Tensor::from({1, 1, 1, 1}, {3});
  Tensor f = Tensor::from({1, 1, 1, 1}, {2});
  CHECK(conv2d(x, f, 1, Padding::valid).item() == doctest::Approx(6.0));

  // 2x2 all-ones filter over [[1,2],[3,4]], stride 2 valid
  Tensor x2 = Tensor::from({1, 2, 2, 1}, {1, 2, 3, 4});
  Tensor ones = Tensor::from({2, 2, 1, 1}, {1, 1, 1, 1});
  CHECK(conv2d(x2, ones, 2, Padding::valid).item() == doctest::Approx(10.0));

  // zero filter bank annihilates
  Tensor zf = Tensor::zeros({3, 3, 1, 4});
  Tensor out = conv2d(x2, zf, 1, Padding::same);
  for (double v : out.values()) CHECK(v == 0.0);

  // same padding spatial contract: ceil(dim/stride)
  Tensor x3 = Tensor::zeros({1, 56, 56, 3});
  Tensor f3 = Tensor::zeros({3, 3, 3, 8});
  CHECK(conv2d(x3, f3, 2, Padding::same).shape() ==
        Shape{1, 28, 28, 8});

  CHECK_THROWS_AS(
      conv2d(x2, Tensor::zeros({3, 3, 1, 1}), 1, Padding::valid),
      shape_error);
}

TEST_CASE("conv2d 1x1 identity filter is the identity map") {
  RngStream rng(11);
  const int C = 3;
  std::vector<double> xv(2 * 4 * 5 * C);
  for (auto& v : xv) v = rng.uniform(-1, 1);
  Tensor x = Tensor::from({2, 4, 5, C}, xv);
  std::vector<double> id(C * C, 0.0);
  for (int c = 0; c < C; ++c) id[c * C + c] = 1.0;
  Tensor f = Tensor::from({1, 1, C, C}, id);
  Tensor y = conv2d(x, f, 1, Padding::same);
  for (std::size_t i = 0; i < xv.size(); ++i)
    CHECK(y.values()[i] == doctest::Approx(xv[i]).epsilon(1e-12));
}

TEST_CASE("batch_norm fixed points") {
  BatchNormState st;
  Tensor gamma = Tensor::from({1}, {1});
  Tensor beta = Tensor::from({1}, {0});

  // zero-mean unit-variance channel passes through
  std::vector<double> vals = {-1.5, -0.5, 0.5, 1.5};
  double m = 0, v = 0;
  for (double x : vals) m += x;
  m /= vals.size();
  for (double& x : vals) x = (x - m);
  for (double x : vals) v += x * x;
  v /= vals.size();
  for (double& x : vals) x /= std::sqrt(v);
  Tensor x = Tensor::from({4, 1}, vals);
  Tensor y = batch_norm(x, gamma, beta, st, BnMode::train);
  for (std::size_t i = 0; i < vals.size(); ++i)
    CHECK(std::fabs(y.values()[i] - vals[i]) < 1e-4);

  // constant channel collapses to beta
  Tensor beta5 = Tensor::from({1}, {5});
  Tensor xc = Tensor::from({4, 1}, {2.5, 2.5, 2.5, 2.5});
  BatchNormState st2;
  Tensor y2 = batch_norm(xc, gamma, beta5, st2, BnMode::train);
  for (double val : y2.values()) CHECK(std::fabs(val - 5.0) < 1e-3);

  // gamma = 0 annihilates
  Tensor g0 = Tensor::from({1}, {0});
  Tensor y3 = batch_norm(x, g0, beta5, st, BnMode::train);
  for (double val : y3.values()) CHECK(val == 5.0);

  // infer without initialized stats
  BatchNormState fresh;
  CHECK_THROWS_AS(batch_norm(x, gamma, beta, fresh, BnMode::infer),
                  state_error);
}

TEST_CASE("batch_norm running statistics") {
  BatchNormState st;
  Tensor gamma = Tensor::from({1}, {1});
  Tensor beta = Tensor::from({1}, {0});
  Tensor x = Tensor::from({4, 1}, {0.0, 1.0, 2.0, 3.0});
  batch_norm(x, gamma, beta, st, BnMode::train);
  CHECK(st.initialized());
  CHECK(st.running_mean[0] == doctest::Approx(1.5));
  CHECK(st.running_var[0] == doctest::Approx(1.25));
  // second batch folds in with momentum 0.9
  Tensor x2 = Tensor::from({2, 1}, {10.0, 10.0});
  batch_norm(x2, gamma, beta, st, BnMode::train);
  CHECK(st.running_mean[0] == doctest::Approx(0.9 * 1.5 + 0.1 * 10.0));
  // untracked pass leaves state alone
  const double rm = st.running_mean[0];
  batch_norm(x2, gamma, beta, st, BnMode::train, false);
  CHECK(st.running_mean[0] == rm);
}

TEST_CASE("activations") {
  Tensor x = Tensor::from({3}, {-1, 0, 2});
  Tensor r = relu(x);
  CHECK(r.values()[0] == 0.0);
  CHECK(r.values()[2] == 2.0);
  CHECK(sigmoid(Tensor::scalar(0)).item() == doctest::Approx(0.5));
  CHECK(std::fabs(sigmoid(Tensor::scalar(2.1)).item() - 0.8909) < 1e-4);

  // strict range
  Tensor big = Tensor::from({2}, {-30, 30});
  Tensor s = sigmoid(big);
  CHECK(s.values()[0] > 0.0);
  CHECK(s.values()[1] < 1.0);
}

TEST_CASE("mean_reduce") {
  CHECK(mean_reduce(Tensor::from({2}, {0.8, 0.2}), 0).item() ==
        doctest::Approx(0.5));
  CHECK(mean_reduce(Tensor::from({3}, {7, 7, 7}), 0).item() ==
        doctest::Approx(7.0));
  CHECK(mean_reduce(Tensor::from({4}, {1, 2, 3, 4}), 0).item() ==
        doctest::Approx(2.5));
  Tensor m = mean_reduce(Tensor::from({2, 2}, {1, 2, 3, 4}), 1);
  CHECK(m.shape() == Shape{2, 1});
  CHECK(m.values()[0] == doctest::Approx(1.5));
  CHECK(m.values()[1] == doctest::Approx(3.5));
  CHECK_THROWS_AS(mean_reduce(Tensor::from({2}, {1, 2}), 1), value_error);
}

TEST_CASE("backward basics") {
  // f(x) = x^2 at x=3
  Tensor x = Tensor::param({1}, {3});
  Tensor y = mul(x, x);
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(6.0));

  // f(x) = sigmoid(x) at 0
  Tensor z = Tensor::param({1}, {0});
  backward(sigmoid(z));
  CHECK(z.grad()[0] == doctest::Approx(0.25));

  // product rule
  Tensor a = Tensor::param({1}, {2});
  Tensor b = Tensor::param({1}, {5});
  backward(mul(a, b));
  CHECK(a.grad()[0] == doctest::Approx(5.0));
  CHECK(b.grad()[0] == doctest::Approx(2.0));

  // non-scalar output rejected
  Tensor v = Tensor::param({2}, {1, 2});
  CHECK_THROWS_AS(backward(add(v, v)), value_error);
}

TEST_CASE("gradient accumulation is linear across shared uses") {
  Tensor x = Tensor::param({1}, {1.7});
  Tensor both = add(mul(x, x), mul(x, x));
  backward(both);
  const double two_uses = x.grad()[0];

  Tensor x2 = Tensor::param({1}, {1.7});
  backward(mul(x2, x2));
  CHECK(two_uses == doctest::Approx(2.0 * x2.grad()[0]));
}

TEST_CASE("broadcasting add/mul with gradient reduction") {
  Tensor m = Tensor::param({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row = Tensor::param({3}, {10, 20, 30});
  Tensor col = Tensor::param({2, 1}, {100, 200});
  Tensor out = add(add(m, row), col);
  CHECK(out.at({0, 0}) == doctest::Approx(111));
  CHECK(out.at({1, 2}) == doctest::Approx(236));
  backward(mean_all(out));
  // each row entry feeds 2 outputs, each col entry 3, each m entry 1 (of 6)
  CHECK(row.grad()[0] == doctest::Approx(2.0 / 6.0));
  CHECK(col.grad()[0] == doctest::Approx(3.0 / 6.0));
  CHECK(m.grad()[0] == doctest::Approx(1.0 / 6.0));

  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2, 2})),
                  shape_error);
}

TEST_CASE("grad_check: quadratic and linear forms") {
  Tensor w = Tensor::param({4}, {0.5, -1.0, 2.0, 0.25});
  auto quad = [&]() {
    Tensor q = mul(w, w);
    return mean_all(q);
  };
  CHECK(grad_check(quad, {w}, 1e-5) < 1e-6);

  Tensor c = Tensor::from({4}, {3, -2, 1, 7});
  auto lin = [&]() { return mean_all(mul(w, c)); };
  CHECK(grad_check(lin, {w}, 1e-5) < 1e-9);
}

TEST_CASE("grad_check over every differentiable op, random small inputs") {
  for (int seed = 0; seed < 10; ++seed) {
    RngStream rng(seed + 1);
    auto rand_vec = [&](std::size_t n, double lo, double hi) {
      std::vector<double> v(n);
      for (auto& x : v) x = rng.uniform(lo, hi);
      return v;
    };

    {  // affine + relu + sigmoid + mean chain (inputs kept off relu kinks)
      const int B = 2 + rng.uniform_int(3), I = 2 + rng.uniform_int(4),
                O = 1 + rng.uniform_int(4);
      Tensor x = Tensor::param({B, I}, rand_vec(B * I, 0.3, 1.0));
      Tensor W = Tensor::param({I, O}, rand_vec(I * O, 0.3, 0.9));
      Tensor b = Tensor::param({O}, rand_vec(O, 0.2, 0.5));
      auto f = [&]() {
        return mean_all(sigmoid(relu(affine(x, W, b))));
      };
      CHECK(grad_check(f, {x, W, b}, 1e-5) < 1e-4);
    }
    {  // conv2d, both paddings and strides
      const int H = 4 + rng.uniform_int(3), W_ = 4 + rng.uniform_int(3);
      Tensor x = Tensor::param({2, H, W_, 2}, rand_vec(2 * H * W_ * 2, -1, 1));
      Tensor f = Tensor::param({3, 3, 2, 2}, rand_vec(3 * 3 * 2 * 2, -1, 1));
      const int stride = 1 + rng.uniform_int(2);
      const Padding pad = seed % 2 ? Padding::same : Padding::valid;
      auto fn = [&]() { return mean_all(conv2d(x, f, stride, pad)); };
      CHECK(grad_check(fn, {x, f}, 1e-5) < 1e-4);
    }
    {  // batch_norm train mode, grads through batch statistics
      const int B = 4 + rng.uniform_int(4), C = 1 + rng.uniform_int(3);
      Tensor x = Tensor::param({B, C}, rand_vec(B * C, -2, 2));
      Tensor g = Tensor::param({C}, rand_vec(C, 0.5, 1.5));
      Tensor be = Tensor::param({C}, rand_vec(C, -0.5, 0.5));
      BatchNormState st;
      auto fn = [&]() {
        return mean_all(
            sigmoid(batch_norm(x, g, be, st, BnMode::train, false)));
      };
      CHECK(grad_check(fn, {x, g, be}, 1e-5) < 1e-4);
    }
    {  // log / clamp / reductions / slice / concat / reshape
      Tensor a = Tensor::param({3, 4}, rand_vec(12, 0.2, 0.8));
      Tensor b = Tensor::param({3, 4}, rand_vec(12, 0.2, 0.8));
      auto fn = [&]() {
        Tensor s = concat_cols({slice_col(a, 1), slice_col(b, 2),
                                mean_reduce(mul(a, b), 1)});
        Tensor t = log(clamp(sigmoid(s), 1e-12, 1 - 1e-12));
        return mean_all(reshape(sum_reduce(t, 0), {3}));
      };
      CHECK(grad_check(fn, {a, b}, 1e-5) < 1e-4);
    }
  }
}

TEST_CASE("tape visits shared subgraphs once") {
  // (x*y) reused twice; wrong multi-visit would double-count
  Tensor x = Tensor::param({1}, {3});
  Tensor y = Tensor::param({1}, {4});
  Tensor p = mul(x, y);
  Tensor out = add(p, p);
  backward(out);
  CHECK(x.grad()[0] == doctest::Approx(8.0));
  CHECK(y.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("no-grad guard suppresses graph construction") {
  Tensor x = Tensor::param({1}, {2});
  NoGradGuard ng;
  Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("tensor block serialization round trip") {
  std::stringstream ss;
  RngStream rng(3);
  std::vector<double> vals(24);
  for (auto& v : vals) v = rng.uniform(-5, 5);
  io::write_tensor_block(ss, {2, 3, 4}, vals);
  std::vector<int> shape;
  std::vector<double> back;
  io::read_tensor_block(ss, shape, back);
  CHECK(shape == std::vector<int>{2, 3, 4});
  CHECK(back == vals);

  // truncation detected
  std::string bytes = ss.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(io::read_tensor_block(cut, shape, back), io_error);
}
