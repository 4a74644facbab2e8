#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ecg/introspection.hpp"
#include "ecg/random.hpp"
#include "synthetic_corpus.hpp"

using namespace ecg;

TEST_CASE("unpool_reconstruct expansion rule") {
  std::vector<double> constant(28, 3.5);
  auto rec = unpool_reconstruct(constant, 1800);
  REQUIRE(rec.size() == 1800);
  for (double v : rec) CHECK(v == 3.5);

  std::vector<double> onehot(28, 0.0);
  onehot[0] = 2.0;
  auto rec2 = unpool_reconstruct(onehot, 1800);
  for (std::size_t i = 0; i < 64; ++i) CHECK(rec2[i] == 2.0);
  for (std::size_t i = 64; i < 1800; ++i) CHECK(rec2[i] == 0.0);

  // the final bin absorbs the 8-sample remainder: 1800 = 27*64 + 72
  std::vector<double> lastbin(28, 0.0);
  lastbin[27] = 1.0;
  auto rec3 = unpool_reconstruct(lastbin, 1800);
  for (std::size_t i = 0; i < 27 * 64; ++i) CHECK(rec3[i] == 0.0);
  for (std::size_t i = 27 * 64; i < 1800; ++i) CHECK(rec3[i] == 1.0);

  CHECK_THROWS_AS(unpool_reconstruct({}, 1800), WrongBinCount);
  std::vector<double> too_many(2000, 1.0);
  CHECK_THROWS_AS(unpool_reconstruct(too_many, 1800), WrongBinCount);
}

TEST_CASE("downsampling the reconstruction by block-first-sample recovers bins") {
  RandomEngine rng(81);
  std::vector<double> bins(28);
  for (auto& b : bins) b = rng.uniform(-2, 2);
  auto rec = unpool_reconstruct(bins, 1800);
  for (std::size_t t = 0; t < bins.size(); ++t)
    CHECK(rec[t * 64] == bins[t]);

  // sum preservation up to span weighting
  double rec_sum = 0.0;
  for (double v : rec) rec_sum += v;
  double want = 0.0;
  for (std::size_t t = 0; t < 27; ++t) want += bins[t] * 64.0;
  want += bins[27] * 72.0;
  CHECK(rec_sum == doctest::Approx(want).epsilon(1e-12));
}

namespace {

nn::BuiltModel toy_model(std::uint64_t seed) {
  return nn::build_branched_model(nn::ModelSpec::toy(), seed);
}

Segment toy_segment(std::uint64_t seed) {
  return testutil::separable_segments(1, 64, seed)[0];
}

}  // namespace

TEST_CASE("trunk activation map is non-negative with gru_seq_len bins") {
  auto model = toy_model(83);
  auto seg = toy_segment(1);
  auto map = activation_map(model, seg, LayerTag::trunk_last_conv);
  CHECK(map.bins.size() == model.spec.gru_seq_len);
  CHECK(map.reconstructed.size() == model.spec.input_length);
  for (double b : map.bins) CHECK(b >= 0.0);
}

TEST_CASE("activation maps equal hand-summed tap activations") {
  auto model = toy_model(89);
  auto seg = toy_segment(2);

  auto batch = nn::Tensor::from_values({1, seg.samples.size(), 1}, seg.samples);
  nn::ForwardTaps taps;
  model.set_requires_grad(false);
  model_forward(model, batch, nn::Mode::infer, 0, &taps);
  model.set_requires_grad(true);

  auto trunk_map = activation_map(model, seg, LayerTag::trunk_last_conv);
  const std::size_t T = model.spec.gru_seq_len;
  const std::size_t c = taps.trunk->shape[2];
  for (std::size_t t = 0; t < T; ++t) {
    double want = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch)
      want += taps.trunk->value[t * c + ch];
    CHECK(trunk_map.bins[t] == doctest::Approx(want).epsilon(1e-12));
  }

  auto gru_map = activation_map(model, seg, LayerTag::gru);
  const std::size_t u = taps.gru_states->shape[2];
  double max_state_sum = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    double s = 0.0;
    for (std::size_t j = 0; j < u; ++j)
      s += std::abs(taps.gru_states->value[t * u + j]);
    max_state_sum = std::max(max_state_sum, s);
    CHECK(gru_map.bins[t] ==
          doctest::Approx(taps.attention[t] * s).epsilon(1e-12));
  }

  // attention weights sum to 1, so the binned total cannot beat the max
  double bin_sum = 0.0;
  for (double b : gru_map.bins) bin_sum += b;
  CHECK(bin_sum <= max_state_sum + 1e-12);
}

TEST_CASE("activation map rejects mismatched segments") {
  auto model = toy_model(97);
  Segment seg;
  seg.samples.assign(100, 0.0);
  CHECK_THROWS_AS(activation_map(model, seg, LayerTag::trunk_last_conv),
                  ShapeMismatch);
}

TEST_CASE("layer_tag_from_string") {
  CHECK(layer_tag_from_string("gru") == LayerTag::gru);
  CHECK(layer_tag_from_string("trunk_last_conv") == LayerTag::trunk_last_conv);
  CHECK_THROWS_AS(layer_tag_from_string("bogus"), UnknownLayerTag);
}

TEST_CASE("inspection CSV holds the three expected rows") {
  auto model = toy_model(101);
  auto seg = toy_segment(3);
  auto csv = inspection_csv(model, seg);

  std::istringstream ss(csv);
  std::string line;
  std::vector<std::string> names;
  while (std::getline(ss, line)) {
    auto comma = line.find(',');
    names.push_back(line.substr(0, comma));
    std::size_t values = 0;
    for (char ch : line)
      if (ch == ',') ++values;
    CHECK(values == model.spec.input_length);
  }
  CHECK(names ==
        std::vector<std::string>{"signal", "trunk_last_conv", "gru"});

  // --normalize keeps the raw rows and appends max-normalized copies
  auto norm = inspection_csv(model, seg, true);
  std::istringstream ns(norm);
  std::vector<std::string> norm_names;
  while (std::getline(ns, line)) {
    const auto name = line.substr(0, line.find(','));
    norm_names.push_back(name);
    if (name == "trunk_last_conv_norm" || name == "gru_norm") {
      double mx = 0.0;
      std::istringstream ls(line.substr(line.find(',') + 1));
      std::string cell;
      while (std::getline(ls, cell, ','))
        mx = std::max(mx, std::abs(std::stod(cell)));
      CHECK(mx == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  CHECK(norm_names ==
        std::vector<std::string>{"signal", "trunk_last_conv", "gru",
                                 "trunk_last_conv_norm", "gru_norm"});
}
