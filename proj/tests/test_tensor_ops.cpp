#include <doctest.h>

#include <cmath>

#include "ecg/ops.hpp"
#include "ecg/random.hpp"

using namespace ecg::nn;
using ecg::RandomEngine;

namespace {

TensorPtr random_tensor(Shape shape, RandomEngine& rng, bool grad = true,
                        double amp = 1.0) {
  auto t = Tensor::create(std::move(shape), grad);
  for (auto& v : t->value) v = rng.uniform(-amp, amp);
  return t;
}

// Direct triple-loop cross-correlation with zero same-padding.
std::vector<double> conv_oracle(const TensorPtr& in, const TensorPtr& k,
                                const TensorPtr& bias) {
  const auto b = in->shape[0], L = in->shape[1], ci = in->shape[2];
  const auto ks = k->shape[0], co = k->shape[2];
  const long pl = static_cast<long>((ks - 1) / 2);
  std::vector<double> out(b * L * co);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t j = 0; j < co; ++j) {
        double acc = bias->value[j];
        for (std::size_t kk = 0; kk < ks; ++kk) {
          const long s = static_cast<long>(t) + static_cast<long>(kk) - pl;
          if (s < 0 || s >= static_cast<long>(L)) continue;
          for (std::size_t c = 0; c < ci; ++c)
            acc += in->value[(bi * L + static_cast<std::size_t>(s)) * ci + c] *
                   k->value[(kk * ci + c) * co + j];
        }
        out[(bi * L + t) * co + j] = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("conv1d identity kernel and zero input") {
  RandomEngine rng(1);
  auto in = random_tensor({2, 9, 1}, rng);
  auto k = Tensor::from_values({1, 1, 1}, {1.0});
  auto bias = Tensor::zeros({1});
  auto out = conv1d(in, k, bias);
  CHECK(out->value == in->value);

  auto zin = Tensor::zeros({1, 5, 3});
  auto zk = Tensor::zeros({3, 3, 4});
  auto zb = Tensor::zeros({4});
  auto zout = conv1d(zin, zk, zb);
  for (double v : zout->value) CHECK(v == 0.0);
}

TEST_CASE("conv1d matches the triple-loop oracle") {
  RandomEngine rng(2);
  auto in = random_tensor({1, 16, 2}, rng);
  auto k = random_tensor({3, 2, 5}, rng);
  auto bias = random_tensor({5}, rng);
  auto out = conv1d(in, k, bias);
  auto want = conv_oracle(in, k, bias);
  REQUIRE(out->value.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(out->value[i] == doctest::Approx(want[i]).epsilon(1e-10));

  // even kernel width (the default filter size is 8)
  auto k8 = random_tensor({8, 2, 3}, rng);
  auto b8 = random_tensor({3}, rng);
  auto out8 = conv1d(in, k8, b8);
  auto want8 = conv_oracle(in, k8, b8);
  CHECK(out8->shape == Shape{1, 16, 3});
  for (std::size_t i = 0; i < want8.size(); ++i)
    CHECK(out8->value[i] == doctest::Approx(want8[i]).epsilon(1e-10));
}

TEST_CASE("conv1d gradients pass finite differences") {
  RandomEngine rng(3);
  auto in = random_tensor({2, 7, 2}, rng);
  auto k = random_tensor({4, 2, 3}, rng);
  auto bias = random_tensor({3}, rng);
  auto loss_fn = [&]() { return sum_all(relu(conv1d(in, k, bias))); };
  const TensorPtr params[] = {in, k, bias};
  CHECK(gradient_check(loss_fn, params) < 1e-6);
}

TEST_CASE("conv1d shape errors") {
  auto in = Tensor::zeros({1, 4, 2});
  auto k = Tensor::zeros({3, 3, 2});
  auto bias = Tensor::zeros({2});
  CHECK_THROWS_AS(conv1d(in, k, bias), ecg::ShapeMismatch);
}

TEST_CASE("batch_norm1d normalizes per channel in train mode") {
  RandomEngine rng(4);
  auto in = random_tensor({4, 10, 3}, rng, true, 2.0);
  auto gamma = Tensor::from_values({3}, {1.0, 1.0, 1.0});
  auto beta = Tensor::zeros({3});
  BatchNormState state;
  auto out = batch_norm1d(in, gamma, beta, Mode::train, state);

  for (std::size_t ch = 0; ch < 3; ++ch) {
    double mean = 0.0, var = 0.0;
    const std::size_t n = 4 * 10;
    for (std::size_t i = 0; i < n; ++i) mean += out->value[i * 3 + ch];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = out->value[i * 3 + ch] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }

  // two-pass statistics oracle on the raw input reproduces the output
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double mean = 0.0, var = 0.0;
    const std::size_t n = 4 * 10;
    for (std::size_t i = 0; i < n; ++i) mean += in->value[i * 3 + ch];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = in->value[i * 3 + ch] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double want = (in->value[i * 3 + ch] - mean) / std::sqrt(var + 1e-5);
      CHECK(out->value[i * 3 + ch] == doctest::Approx(want).epsilon(1e-8));
    }
  }
}

TEST_CASE("batch_norm1d gamma zero blanks the output") {
  RandomEngine rng(5);
  auto in = random_tensor({2, 6, 2}, rng);
  auto gamma = Tensor::zeros({2});
  auto beta = Tensor::zeros({2});
  BatchNormState state;
  auto out = batch_norm1d(in, gamma, beta, Mode::train, state);
  for (double v : out->value) CHECK(v == 0.0);
}

TEST_CASE("batch_norm1d running stats feed infer mode") {
  RandomEngine rng(6);
  auto gamma = Tensor::from_values({1}, {1.0});
  auto beta = Tensor::zeros({1});
  BatchNormState state;
  // repeated train batches pull the running stats towards the batch stats
  for (int i = 0; i < 200; ++i) {
    auto in = random_tensor({8, 16, 1}, rng, false, 1.0);
    for (auto& v : in->value) v = v * 2.0 + 3.0;  // mean 3, var 4/3
    batch_norm1d(in, gamma, beta, Mode::train, state);
  }
  CHECK(state.running_mean[0] == doctest::Approx(3.0).epsilon(0.05));
  CHECK(state.running_var[0] == doctest::Approx(4.0 / 3.0).epsilon(0.1));

  auto probe = Tensor::from_values({1, 1, 1}, {3.0});
  auto out = batch_norm1d(probe, gamma, beta, Mode::infer, state);
  CHECK(std::abs(out->value[0]) < 0.1);  // the running mean centers it
}

TEST_CASE("batch_norm1d gradients pass finite differences (train and infer)") {
  RandomEngine rng(7);
  auto in = random_tensor({2, 5, 3}, rng, true, 2.0);
  auto gamma = random_tensor({3}, rng);
  auto beta = random_tensor({3}, rng);
  auto mix_k = random_tensor({3, 3, 2}, rng, false);
  auto mix_b = Tensor::zeros({2});

  BatchNormState state;
  auto train_loss = [&]() {
    return sum_all(
        conv1d(batch_norm1d(in, gamma, beta, Mode::train, state), mix_k, mix_b));
  };
  const TensorPtr params[] = {in, gamma, beta};
  CHECK(gradient_check(train_loss, params) < 1e-5);

  auto infer_loss = [&]() {
    return sum_all(
        conv1d(batch_norm1d(in, gamma, beta, Mode::infer, state), mix_k, mix_b));
  };
  CHECK(gradient_check(infer_loss, params) < 1e-6);
}

TEST_CASE("relu basics and finite differences") {
  auto neg = Tensor::from_values({2, 2}, {-1.0, -2.0, -0.5, -3.0});
  auto out = relu(neg);
  for (double v : out->value) CHECK(v == 0.0);

  RandomEngine rng(8);
  auto in = random_tensor({3, 4}, rng);
  for (auto& v : in->value) v += v > 0 ? 0.5 : -0.5;  // keep away from 0
  auto pos_out = relu(in);
  for (std::size_t i = 0; i < in->size(); ++i)
    CHECK(pos_out->value[i] == std::max(0.0, in->value[i]));

  auto loss_fn = [&]() { return sum_all(relu(in)); };
  const TensorPtr params[] = {in};
  CHECK(gradient_check(loss_fn, params) < 1e-7);
}

TEST_CASE("concat_channels shapes, identity with zero channels, gradients") {
  RandomEngine rng(9);
  auto a = random_tensor({1, 8, 3}, rng);
  auto b = random_tensor({1, 8, 5}, rng);
  auto out = concat_channels(a, b);
  CHECK(out->shape == Shape{1, 8, 8});
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(out->value[i * 8 + c] == a->value[i * 3 + c]);
    for (std::size_t c = 0; c < 5; ++c)
      CHECK(out->value[i * 8 + 3 + c] == b->value[i * 5 + c]);
  }

  auto empty = Tensor::zeros({1, 8, 0});
  auto same = concat_channels(a, empty);
  CHECK(same->shape == Shape{1, 8, 3});
  CHECK(same->value == a->value);

  // gradient of sum w.r.t. both inputs is all ones
  auto loss = sum_all(concat_channels(a, b));
  a->zero_grad();
  b->zero_grad();
  backward(loss);
  for (double g : a->grad) CHECK(g == 1.0);
  for (double g : b->grad) CHECK(g == 1.0);

  auto c = Tensor::zeros({1, 7, 3});
  CHECK_THROWS_AS(concat_channels(a, c), ecg::ShapeMismatch);
}

TEST_CASE("avg_pool1d lengths, oracle and gradients") {
  RandomEngine rng(10);
  auto constant = Tensor::create({1, 12, 2});
  std::fill(constant->value.begin(), constant->value.end(), 2.5);
  auto cout_t = avg_pool1d(constant, 4, 4);
  CHECK(cout_t->shape == Shape{1, 3, 2});
  for (double v : cout_t->value) CHECK(v == doctest::Approx(2.5));

  auto big = Tensor::zeros({1, 1800, 1});
  CHECK(avg_pool1d(big, 4, 4)->shape[1] == 450);

  auto in = random_tensor({2, 11, 3}, rng);
  auto out = avg_pool1d(in, 4, 3);
  const std::size_t lo = (11 - 4) / 3 + 1;
  REQUIRE(out->shape[1] == lo);
  for (std::size_t bi = 0; bi < 2; ++bi)
    for (std::size_t j = 0; j < lo; ++j)
      for (std::size_t c = 0; c < 3; ++c) {
        double want = 0.0;
        for (std::size_t p = 0; p < 4; ++p)
          want += in->value[(bi * 11 + j * 3 + p) * 3 + c];
        want /= 4.0;
        CHECK(out->value[(bi * lo + j) * 3 + c] ==
              doctest::Approx(want).epsilon(1e-12));
      }

  auto loss_fn = [&]() { return sum_all(relu(avg_pool1d(in, 4, 3))); };
  const TensorPtr params[] = {in};
  CHECK(gradient_check(loss_fn, params) < 1e-6);

  CHECK_THROWS_AS(avg_pool1d(in, 12, 1), ecg::PoolLargerThanInput);
}

TEST_CASE("mean_over_time value and gradients") {
  RandomEngine rng(11);
  auto in = random_tensor({2, 5, 3}, rng);
  auto out = mean_over_time(in);
  CHECK(out->shape == Shape{2, 3});
  for (std::size_t bi = 0; bi < 2; ++bi)
    for (std::size_t c = 0; c < 3; ++c) {
      double want = 0.0;
      for (std::size_t t = 0; t < 5; ++t)
        want += in->value[(bi * 5 + t) * 3 + c];
      CHECK(out->value[bi * 3 + c] == doctest::Approx(want / 5.0));
    }

  auto loss_fn = [&]() { return sum_all(relu(mean_over_time(in))); };
  const TensorPtr params[] = {in};
  CHECK(gradient_check(loss_fn, params) < 1e-6);
}

namespace {

GruWeights zero_gru(std::size_t d, std::size_t u) {
  GruWeights w;
  w.wz = Tensor::zeros({d, u});
  w.uz = Tensor::zeros({u, u});
  w.bz = Tensor::zeros({u});
  w.wr = Tensor::zeros({d, u});
  w.ur = Tensor::zeros({u, u});
  w.br = Tensor::zeros({u});
  w.wh = Tensor::zeros({d, u});
  w.uh = Tensor::zeros({u, u});
  w.bh = Tensor::zeros({u});
  return w;
}

GruWeights random_gru(std::size_t d, std::size_t u, RandomEngine& rng) {
  auto w = zero_gru(d, u);
  for (auto* t : {&w.wz, &w.uz, &w.wr, &w.ur, &w.wh, &w.uh, &w.bz, &w.br, &w.bh}) {
    (*t)->requires_grad = true;
    for (auto& v : (*t)->value) v = rng.uniform(-0.7, 0.7);
  }
  return w;
}

}  // namespace

TEST_CASE("gru_forward all-zero configuration yields zero states") {
  auto w = zero_gru(3, 2);
  auto in = Tensor::zeros({2, 4, 3});
  auto h0 = Tensor::zeros({2, 2});
  auto states = gru_forward(in, w, h0);
  for (double v : states->value) CHECK(v == 0.0);
}

TEST_CASE("gru_forward single scalar step matches the frozen hand value") {
  GruWeights w = zero_gru(1, 1);
  w.wz->value = {0.1};  w.uz->value = {0.2};  w.bz->value = {0.05};
  w.wr->value = {0.3};  w.ur->value = {0.4};  w.br->value = {-0.1};
  w.wh->value = {0.7};  w.uh->value = {-0.5}; w.bh->value = {0.2};
  auto in = Tensor::from_values({1, 1, 1}, {0.5});
  auto h0 = Tensor::from_values({1, 1}, {0.3});
  auto states = gru_forward(in, w, h0);
  // z=0.5399148845555657, r=0.542397940774351, c=0.43710005547632824
  CHECK(states->value[0] ==
        doctest::Approx(0.37402236062506344).epsilon(1e-12));
}

TEST_CASE("gru_forward equals sequential single-step application") {
  RandomEngine rng(12);
  const std::size_t b = 2, T = 5, d = 3, u = 4;
  auto w = random_gru(d, u, rng);
  auto in = random_tensor({b, T, d}, rng);
  auto h0 = random_tensor({b, u}, rng, false, 0.5);
  auto states = gru_forward(in, w, h0);

  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  std::vector<double> h(h0->value);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> hn(b * u);
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t j = 0; j < u; ++j) {
        double az = w.bz->value[j], ar = w.br->value[j], ah = w.bh->value[j];
        for (std::size_t k = 0; k < d; ++k) {
          const double x = in->value[(bi * T + t) * d + k];
          az += x * w.wz->value[k * u + j];
          ar += x * w.wr->value[k * u + j];
          ah += x * w.wh->value[k * u + j];
        }
        for (std::size_t k = 0; k < u; ++k) {
          az += h[bi * u + k] * w.uz->value[k * u + j];
          ar += h[bi * u + k] * w.ur->value[k * u + j];
        }
        const double z = sig(az);
        double r_gate_sum = ah;
        for (std::size_t k = 0; k < u; ++k) {
          double ark = w.br->value[k];
          for (std::size_t kk = 0; kk < d; ++kk)
            ark += in->value[(bi * T + t) * d + kk] * w.wr->value[kk * u + k];
          for (std::size_t kk = 0; kk < u; ++kk)
            ark += h[bi * u + kk] * w.ur->value[kk * u + k];
          r_gate_sum += sig(ark) * h[bi * u + k] * w.uh->value[k * u + j];
        }
        const double c = std::tanh(r_gate_sum);
        hn[bi * u + j] = (1.0 - z) * h[bi * u + j] + z * c;
      }
    h = hn;
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t j = 0; j < u; ++j)
        CHECK(states->value[(bi * T + t) * u + j] ==
              doctest::Approx(h[bi * u + j]).epsilon(1e-12));
  }
}

TEST_CASE("gru_forward gradients pass finite differences") {
  RandomEngine rng(13);
  const std::size_t b = 2, T = 4, d = 3, u = 2;
  auto w = random_gru(d, u, rng);
  auto in = random_tensor({b, T, d}, rng);
  auto h0 = random_tensor({b, u}, rng, true, 0.5);
  auto score_w = random_tensor({u}, rng, false);

  auto loss_fn = [&]() {
    auto states = gru_forward(in, w, h0);
    auto pooled = attention_pool(states, score_w, Tensor::zeros({1}));
    return sum_all(pooled);
  };
  const TensorPtr params[] = {in,   w.wz, w.uz, w.bz, w.wr, w.ur,
                              w.br, w.wh, w.uh, w.bh, h0};
  CHECK(gradient_check(loss_fn, params) < 1e-6);
}

TEST_CASE("attention_pool uniform and saturated scores") {
  RandomEngine rng(14);
  auto states = random_tensor({2, 4, 3}, rng);
  auto w0 = Tensor::zeros({3});
  auto b0 = Tensor::zeros({1});
  std::vector<double> alpha;
  auto out = attention_pool(states, w0, b0, &alpha);
  for (double a : alpha) CHECK(a == doctest::Approx(0.25));
  for (std::size_t bi = 0; bi < 2; ++bi)
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0.0;
      for (std::size_t t = 0; t < 4; ++t)
        mean += states->value[(bi * 4 + t) * 3 + c];
      CHECK(out->value[bi * 3 + c] == doctest::Approx(mean / 4.0));
    }

  // per-row weights sum to one
  for (std::size_t bi = 0; bi < 2; ++bi) {
    double s = 0.0;
    for (std::size_t t = 0; t < 4; ++t) s += alpha[bi * 4 + t];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }

  // a dominating score selects that timestep's state
  auto states2 = Tensor::create({1, 3, 1});
  states2->value = {1.0, -2.0, 5.0};
  auto w1 = Tensor::from_values({1}, {1000.0});
  auto out2 = attention_pool(states2, w1, b0);
  CHECK(out2->value[0] == doctest::Approx(5.0).epsilon(1e-6));
}

TEST_CASE("attention_pool matches the explicit softmax-weighted-sum oracle") {
  RandomEngine rng(15);
  auto states = random_tensor({2, 4, 3}, rng);
  auto w = random_tensor({3}, rng);
  auto b = random_tensor({1}, rng);
  auto out = attention_pool(states, w, b);

  for (std::size_t bi = 0; bi < 2; ++bi) {
    std::vector<double> e(4);
    double mx = -1e300;
    for (std::size_t t = 0; t < 4; ++t) {
      e[t] = b->value[0];
      for (std::size_t c = 0; c < 3; ++c)
        e[t] += w->value[c] * states->value[(bi * 4 + t) * 3 + c];
      mx = std::max(mx, e[t]);
    }
    double denom = 0.0;
    for (auto& x : e) {
      x = std::exp(x - mx);
      denom += x;
    }
    for (std::size_t c = 0; c < 3; ++c) {
      double want = 0.0;
      for (std::size_t t = 0; t < 4; ++t)
        want += e[t] / denom * states->value[(bi * 4 + t) * 3 + c];
      CHECK(out->value[bi * 3 + c] == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention_pool gradients pass finite differences") {
  RandomEngine rng(16);
  auto states = random_tensor({2, 4, 3}, rng);
  auto w = random_tensor({3}, rng);
  auto b = random_tensor({1}, rng);
  auto mix = random_tensor({3, 2}, rng, false);
  auto loss_fn = [&]() {
    auto pooled = attention_pool(states, w, b);
    return sum_all(relu(dense(pooled, mix, Tensor::zeros({2}))));
  };
  const TensorPtr params[] = {states, w, b};
  CHECK(gradient_check(loss_fn, params) < 1e-6);
}

TEST_CASE("dense identity, zero input and matmul oracle") {
  RandomEngine rng(17);
  auto eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye->value[i * 3 + i] = 1.0;
  auto in = random_tensor({2, 3}, rng);
  auto out = dense(in, eye, Tensor::zeros({3}));
  CHECK(out->value == in->value);

  auto bias = random_tensor({4}, rng);
  auto w = random_tensor({3, 4}, rng);
  auto zout = dense(Tensor::zeros({2, 3}), w, bias);
  for (std::size_t bi = 0; bi < 2; ++bi)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(zout->value[bi * 4 + j] == bias->value[j]);

  auto mout = dense(in, w, bias);
  for (std::size_t bi = 0; bi < 2; ++bi)
    for (std::size_t j = 0; j < 4; ++j) {
      double want = bias->value[j];
      for (std::size_t k = 0; k < 3; ++k)
        want += in->value[bi * 3 + k] * w->value[k * 4 + j];
      CHECK(mout->value[bi * 4 + j] == doctest::Approx(want).epsilon(1e-12));
    }

  auto loss_fn = [&]() { return sum_all(relu(dense(in, w, bias))); };
  const TensorPtr params[] = {in, w, bias};
  CHECK(gradient_check(loss_fn, params) < 1e-6);
}

TEST_CASE("softmax_cross_entropy uniform, saturated and FD-checked") {
  auto logits = Tensor::zeros({2, 5}, true);
  std::vector<double> targets(10, 0.0);
  targets[0] = 1.0;
  targets[5 + 3] = 1.0;
  auto [probs, loss] = softmax_cross_entropy(logits, targets);
  for (double p : probs->value) CHECK(p == doctest::Approx(0.2));
  CHECK(loss->value[0] == doctest::Approx(std::log(5.0)).epsilon(1e-12));

  auto hot = Tensor::zeros({1, 5}, true);
  hot->value = {1000.0, 0.0, 0.0, 0.0, 0.0};
  std::vector<double> t2 = {1, 0, 0, 0, 0};
  auto [p2, l2] = softmax_cross_entropy(hot, t2);
  CHECK(l2->value[0] < 1e-9);

  RandomEngine rng(18);
  auto rl = random_tensor({3, 5}, rng, true, 2.0);
  std::vector<double> rt(15, 0.0);
  rt[2] = rt[5 + 0] = rt[10 + 4] = 1.0;
  auto loss_fn = [&]() { return softmax_cross_entropy(rl, rt).second; };
  const TensorPtr params[] = {rl};
  CHECK(gradient_check(loss_fn, params) < 1e-6);

  // probability rows stay on the simplex
  auto [p3, l3] = softmax_cross_entropy(rl, rt);
  for (std::size_t bi = 0; bi < 3; ++bi) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(p3->value[bi * 5 + j] >= 0.0);
      s += p3->value[bi * 5 + j];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("nll_from_probs on merged softmax rows passes finite differences") {
  RandomEngine rng(19);
  auto la = random_tensor({2, 5}, rng, true, 1.5);
  auto lb = random_tensor({2, 5}, rng, true, 1.5);
  std::vector<double> t(10, 0.0);
  t[1] = t[5 + 4] = 1.0;
  auto loss_fn = [&]() {
    auto merged = scale(add(softmax(la), softmax(lb)), 0.5);
    return nll_from_probs(merged, t);
  };
  const TensorPtr params[] = {la, lb};
  CHECK(gradient_check(loss_fn, params) < 1e-6);
}

TEST_CASE("dropout identity modes and drop fraction") {
  RandomEngine rng(20);
  auto in = random_tensor({1000}, rng);
  CHECK(dropout(in, 0.0, Mode::train, 1) == in);
  CHECK(dropout(in, 0.9, Mode::infer, 1) == in);
  CHECK_THROWS_AS(dropout(in, 1.0, Mode::train, 1), ecg::InvalidValue);

  auto big = Tensor::create({1000000});
  std::fill(big->value.begin(), big->value.end(), 1.0);
  auto out = dropout(big, 0.25, Mode::train, 7);
  std::size_t dropped = 0;
  for (double v : out->value) {
    if (v == 0.0)
      ++dropped;
    else
      CHECK(v == doctest::Approx(1.0 / 0.75));
  }
  const double frac = static_cast<double>(dropped) / 1e6;
  CHECK(std::abs(frac - 0.25) < 0.005);

  // same seed, same mask
  auto out2 = dropout(big, 0.25, Mode::train, 7);
  CHECK(out->value == out2->value);

  auto loss_fn = [&]() { return sum_all(dropout(in, 0.25, Mode::train, 3)); };
  const TensorPtr params[] = {in};
  CHECK(gradient_check(loss_fn, params) < 1e-9);
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  Parameter p("w", Tensor::from_values({3}, {1.0, -2.0, 0.5}, true));
  p.tensor->zero_grad();
  const auto before = p.tensor->value;
  adam_step(std::span<Parameter>(&p, 1), {});
  CHECK(p.tensor->value == before);
  CHECK(p.step_count == 1);
}

TEST_CASE("adam matches the frozen two-step oracle") {
  Parameter p("w", Tensor::from_values({1}, {1.0}, true));
  AdamConfig cfg;  // lr = 5e-4 per the defaults
  CHECK(cfg.lr == 5e-4);

  p.tensor->ensure_grad();
  p.tensor->grad[0] = 1.0;
  adam_step(std::span<Parameter>(&p, 1), cfg);
  CHECK(p.tensor->value[0] == doctest::Approx(0.9995000000049999).epsilon(1e-15));

  p.tensor->grad[0] = 1.0;
  adam_step(std::span<Parameter>(&p, 1), cfg);
  CHECK(p.tensor->value[0] == doctest::Approx(0.99900000001).epsilon(1e-15));
}

TEST_CASE("gradient accumulates across branches of a diamond graph") {
  RandomEngine rng(21);
  auto x = random_tensor({4}, rng);
  auto a = scale(x, 2.0);
  auto b = relu(x);
  auto y = sum_all(add(a, b));
  x->zero_grad();
  backward(y);
  for (std::size_t i = 0; i < 4; ++i) {
    const double want = 2.0 + (x->value[i] > 0.0 ? 1.0 : 0.0);
    CHECK(x->grad[i] == want);
  }

  // backward accumulates rather than overwriting
  backward(y);
  for (std::size_t i = 0; i < 4; ++i) {
    const double want = 2.0 * (2.0 + (x->value[i] > 0.0 ? 1.0 : 0.0));
    CHECK(x->grad[i] == want);
  }
}

TEST_CASE("gradient_check is near zero for a linear map") {
  RandomEngine rng(22);
  auto x = random_tensor({6}, rng);
  auto loss_fn = [&]() { return sum_all(scale(x, 3.25)); };
  const TensorPtr params[] = {x};
  CHECK(gradient_check(loss_fn, params) < 1e-10);
}

TEST_CASE("forward passes are bit-identical given identical inputs") {
  RandomEngine rng(23);
  auto in = random_tensor({2, 16, 2}, rng);
  auto k = random_tensor({3, 2, 4}, rng);
  auto bias = random_tensor({4}, rng);
  auto a = conv1d(in, k, bias);
  auto b = conv1d(in, k, bias);
  CHECK(a->value == b->value);
}

TEST_CASE("f32 precision mode rounds values through float") {
  set_precision(Precision::f32);
  RandomEngine rng(24);
  auto in = random_tensor({2, 8, 2}, rng);
  auto k = random_tensor({3, 2, 3}, rng);
  auto bias = random_tensor({3}, rng);
  auto out = conv1d(in, k, bias);
  for (double v : out->value)
    CHECK(v == static_cast<double>(static_cast<float>(v)));
  set_precision(Precision::f64);

  auto out64 = conv1d(in, k, bias);
  bool any_extra_precision = false;
  for (double v : out64->value)
    any_extra_precision |= v != static_cast<double>(static_cast<float>(v));
  CHECK(any_extra_precision);
}
