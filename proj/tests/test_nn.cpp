#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "abd/nn.hpp"

using namespace abd;

namespace {

Tensor2 column(std::vector<double> v) {
  Tensor2 t(v.size(), 1);
  for (std::size_t i = 0; i < v.size(); ++i) t(i, 0) = v[i];
  return t;
}

ConvParams edge_kernel(int dilation) {
  ConvParams p;
  p.kernel = 3;
  p.dilation = dilation;
  p.in_ch = 1;
  p.out_ch = 1;
  p.resize();
  p.wt(0, 0, 0) = 1.0;
  p.wt(1, 0, 0) = 0.0;
  p.wt(2, 0, 0) = -1.0;
  return p;
}

Tensor2 random_tensor(std::uint64_t seed, std::size_t rows, std::size_t cols) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor2 t(rows, cols);
  for (double& v : t.data()) v = g(rng);
  return t;
}

}  // namespace

TEST_CASE("conv1d valid hand case") {
  auto out = conv1d_forward(column({1, 2, 3, 4, 5}), edge_kernel(1), Padding::valid);
  REQUIRE(out.rows() == 3);
  CHECK(out(0, 0) == -2.0);
  CHECK(out(1, 0) == -2.0);
  CHECK(out(2, 0) == -2.0);
}

TEST_CASE("conv1d dilated taps") {
  auto out = conv1d_forward(column({1, 2, 3, 4, 5, 6, 7}), edge_kernel(2), Padding::valid);
  REQUIRE(out.rows() == 3);
  for (int t = 0; t < 3; ++t) CHECK(out(t, 0) == -4.0);
}

TEST_CASE("conv1d identity kernel") {
  ConvParams p;
  p.kernel = 1;
  p.dilation = 3;
  p.in_ch = 1;
  p.out_ch = 1;
  p.resize();
  p.wt(0, 0, 0) = 1.0;
  auto x = column({3, 1, 4, 1, 5});
  auto out = conv1d_forward(x, p, Padding::valid);
  CHECK(out == x);
}

TEST_CASE("conv1d same padding preserves length") {
  auto x = random_tensor(0, 11, 3);
  ConvParams p;
  p.kernel = 5;
  p.dilation = 2;
  p.in_ch = 3;
  p.out_ch = 4;
  p.resize();
  for (double& v : p.w) v = 0.1;
  auto out = conv1d_forward(x, p, Padding::same);
  CHECK(out.rows() == 11);
  CHECK(out.cols() == 4);
}

TEST_CASE("conv1d valid mode rejects short inputs") {
  CHECK_THROWS_AS(conv1d_forward(column({1, 2}), edge_kernel(1), Padding::valid), ConfigError);
}

TEST_CASE("dilated conv equals plain conv on interleaved subsequences") {
  const int dilation = 3;
  auto x = random_tensor(4, 30, 2);
  ConvParams p;
  p.kernel = 3;
  p.dilation = dilation;
  p.in_ch = 2;
  p.out_ch = 2;
  p.resize();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  for (double& v : p.w) v = g(rng);
  for (double& v : p.b) v = g(rng);
  auto dil = conv1d_forward(x, p, Padding::valid);

  ConvParams plain = p;
  plain.dilation = 1;
  for (int phase = 0; phase < dilation; ++phase) {
    std::vector<std::size_t> idx;
    for (std::size_t t = static_cast<std::size_t>(phase); t < 30; t += dilation) idx.push_back(t);
    Tensor2 sub(idx.size(), 2);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < 2; ++c) sub(i, c) = x(idx[i], c);
    auto out = conv1d_forward(sub, plain, Padding::valid);
    // Row i of the subsequence conv corresponds to dilated output at phase + i*dilation.
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t c = 0; c < 2; ++c)
        CHECK(out(i, c) == Catch::Approx(dil(static_cast<std::size_t>(phase) + i * dilation, c))
                               .margin(1e-12));
  }
}

TEST_CASE("maxpool1d basic, ties and odd length") {
  auto out = maxpool1d_forward(column({1, 3, 2, 5}));
  CHECK(out(0, 0) == 3.0);
  CHECK(out(1, 0) == 5.0);

  std::vector<std::size_t> argmax;
  auto tie = maxpool1d_forward(column({7, 7, 1, 0}), &argmax);
  CHECK(tie(0, 0) == 7.0);
  CHECK(argmax[0] == 0);  // earlier index wins ties
  CHECK(tie(1, 0) == 1.0);

  auto odd = maxpool1d_forward(column({1, 2, 3, 4, 99}));
  REQUIRE(odd.rows() == 2);  // trailing element dropped
  CHECK(odd(1, 0) == 4.0);

  CHECK_THROWS_AS(maxpool1d_forward(column({1})), ConfigError);
}

TEST_CASE("maxpool backward routes each gradient to the recorded argmax") {
  auto x = random_tensor(7, 3, 4);
  std::vector<std::size_t> argmax;
  auto out = maxpool1d_forward(x, &argmax);
  Tensor2 dout(out.rows(), out.cols());
  for (double& v : dout.data()) v = 1.0;
  auto dx = maxpool1d_backward(dout, argmax, x.rows());
  double sum = 0.0;
  std::size_t nonzero = 0;
  for (double v : dx.data()) {
    sum += v;
    nonzero += v != 0.0;
  }
  CHECK(sum == static_cast<double>(dout.size()));
  CHECK(nonzero == dout.size());
}

TEST_CASE("dense identity") {
  DenseParams p;
  p.in = 3;
  p.out = 3;
  p.resize();
  for (int i = 0; i < 3; ++i) p.wt(i, i) = 1.0;
  std::vector<double> x{0.1, -2.0, 3.5};
  CHECK(dense_forward(x, p) == x);
}

TEST_CASE("softmax symmetry and stabilization") {
  auto s = softmax({0.0, 0.0});
  CHECK(s[0] == Catch::Approx(0.5).margin(1e-15));
  CHECK(s[1] == Catch::Approx(0.5).margin(1e-15));

  auto big = softmax({1000.0, 0.0});
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == Catch::Approx(1.0).margin(1e-12));
  CHECK(big[1] >= 0.0);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    auto v = softmax({g(rng), g(rng)});
    CHECK(v[0] + v[1] == Catch::Approx(1.0).margin(1e-12));
    CHECK(v[0] > 0.0);
    CHECK(v[1] > 0.0);
  }
}

TEST_CASE("class weights from frequencies") {
  std::vector<std::uint8_t> balanced{0, 1, 0, 1};
  auto cw = class_weights(balanced);
  CHECK(cw.theta0 == Catch::Approx(2.0));
  CHECK(cw.theta1 == Catch::Approx(2.0));

  std::vector<std::uint8_t> skewed;
  for (int i = 0; i < 7; ++i) skewed.push_back(0);
  for (int i = 0; i < 3; ++i) skewed.push_back(1);
  cw = class_weights(skewed);
  CHECK(cw.theta0 == Catch::Approx(1.0 / 0.7));
  CHECK(cw.theta1 == Catch::Approx(1.0 / 0.3));

  std::vector<std::uint8_t> single(5, 1);
  CHECK_THROWS_AS(class_weights(single), DataError);
}

TEST_CASE("weighted NLL hand cases") {
  Tensor2 probs(1, 2);
  probs(0, 0) = 0.5;
  probs(0, 1) = 0.5;
  std::vector<std::uint8_t> label0{0};
  CHECK(weighted_nll(probs, label0, {1.0, 1.0}) ==
        Catch::Approx(0.5 * -std::log(0.5)).epsilon(1e-12));

  probs(0, 0) = 0.2;
  probs(0, 1) = 0.8;
  std::vector<std::uint8_t> label1{1};
  CHECK(weighted_nll(probs, label1, {1.0, 3.0}) ==
        Catch::Approx(0.75 * -std::log(0.8)).epsilon(1e-12));
}

TEST_CASE("equal class weights reduce to half the plain NLL sum") {
  auto probs = random_tensor(2, 40, 2);
  std::vector<std::uint8_t> labels(40);
  std::mt19937_64 rng(3);
  for (std::size_t n = 0; n < 40; ++n) {
    const double a = std::exp(probs(n, 0)), b = std::exp(probs(n, 1));
    probs(n, 0) = a / (a + b);
    probs(n, 1) = b / (a + b);
    labels[n] = rng() % 2;
  }
  double plain = 0.0;
  for (std::size_t n = 0; n < 40; ++n) plain += -std::log(probs(n, labels[n]));
  for (double theta : {1.0, 2.0, 17.5})
    CHECK(weighted_nll(probs, labels, {theta, theta}) ==
          Catch::Approx(0.5 * plain).epsilon(1e-12));
}

TEST_CASE("weighted NLL is invariant under weight rescaling") {
  auto probs = random_tensor(6, 20, 2);
  std::vector<std::uint8_t> labels(20);
  for (std::size_t n = 0; n < 20; ++n) {
    const double a = std::exp(probs(n, 0)), b = std::exp(probs(n, 1));
    probs(n, 0) = a / (a + b);
    probs(n, 1) = b / (a + b);
    labels[n] = n % 2;
  }
  const double base = weighted_nll(probs, labels, {1.3, 4.2});
  for (double c : {0.1, 2.0, 1000.0})
    CHECK(weighted_nll(probs, labels, {1.3 * c, 4.2 * c}) == Catch::Approx(base).epsilon(1e-12));
}

TEST_CASE("zero probability is clamped and counted, not thrown") {
  Tensor2 probs(1, 2);
  probs(0, 0) = 0.0;
  probs(0, 1) = 1.0;
  std::vector<std::uint8_t> labels{0};
  std::size_t clamps = 0;
  const double loss = weighted_nll(probs, labels, {1.0, 1.0}, &clamps);
  CHECK(std::isfinite(loss));
  CHECK(clamps == 1);
}

TEST_CASE("adam leaves parameters unchanged on zero gradient") {
  std::vector<double> params{1.0, -2.0, 3.0};
  std::vector<double> grads{0.0, 0.0, 0.0};
  AdamState st;
  adam_step(params, grads, st, AdamConfig{});
  CHECK(params == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adam step size approaches lr under a constant gradient") {
  std::vector<double> params{0.0};
  AdamState st;
  AdamConfig cfg;
  cfg.lr = 1e-3;
  std::vector<double> grads{0.37};
  double prev = params[0];
  double step = 0.0;
  for (int t = 0; t < 2000; ++t) {
    adam_step(params, grads, st, cfg);
    step = prev - params[0];
    prev = params[0];
  }
  CHECK(step == Catch::Approx(cfg.lr).epsilon(1e-3));
}

TEST_CASE("adam is deterministic") {
  auto run = [] {
    std::vector<double> params{0.5, -0.5};
    AdamState st;
    std::mt19937_64 rng(77);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
      std::vector<double> grads{g(rng), g(rng)};
      adam_step(params, grads, st, AdamConfig{});
    }
    return params;
  };
  CHECK(run() == run());
}

TEST_CASE("adam rejects non-finite gradients") {
  std::vector<double> params{1.0};
  std::vector<double> grads{std::nan("")};
  AdamState st;
  CHECK_THROWS_AS(adam_step(params, grads, st, AdamConfig{}), NumericError);
}

TEST_CASE("grad_check validates a dense+softmax layer analytically") {
  DenseParams p;
  p.in = 4;
  p.out = 2;
  p.resize();
  std::mt19937_64 rng(0);
  std::normal_distribution<double> g(0.0, 0.5);
  for (double& v : p.w) v = g(rng);
  for (double& v : p.b) v = g(rng);
  std::vector<double> x{0.3, -1.2, 0.7, 0.1};
  const std::vector<std::uint8_t> labels{1};
  const ClassWeights cw{1.0, 3.0};

  auto loss_of = [&]() {
    auto logits = dense_forward(x, p);
    auto probs = softmax(logits);
    Tensor2 pm(1, 2);
    pm(0, 0) = probs[0];
    pm(0, 1) = probs[1];
    return weighted_nll(pm, labels, cw);
  };
  // Analytic: dlogits = scale * (probs - onehot), then dense backward.
  auto logits = dense_forward(x, p);
  auto probs = softmax(logits);
  const double scale = cw.theta1 / (cw.theta0 + cw.theta1);
  std::vector<double> dlogits{scale * probs[0], scale * (probs[1] - 1.0)};
  DenseParams grad = p;
  std::fill(grad.w.begin(), grad.w.end(), 0.0);
  std::fill(grad.b.begin(), grad.b.end(), 0.0);
  dense_backward(x, p, dlogits, grad);

  std::vector<double> flat_p(p.w);
  flat_p.insert(flat_p.end(), p.b.begin(), p.b.end());
  std::vector<double> flat_g(grad.w);
  flat_g.insert(flat_g.end(), grad.b.begin(), grad.b.end());
  auto wrapped = [&]() {
    std::copy(flat_p.begin(), flat_p.begin() + 8, p.w.begin());
    std::copy(flat_p.begin() + 8, flat_p.end(), p.b.begin());
    return loss_of();
  };
  CHECK(grad_check(flat_p, flat_g, wrapped, 1e-5) < 1e-6);
}
