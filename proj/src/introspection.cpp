#include "ecg/introspection.hpp"

#include <cmath>
#include <sstream>

namespace ecg {

using nn::Mode;

LayerTag layer_tag_from_string(const std::string& s) {
  if (s == "trunk_last_conv") return LayerTag::trunk_last_conv;
  if (s == "gru") return LayerTag::gru;
  throw UnknownLayerTag(s);
}

ActivationMap activation_map(nn::BuiltModel& model, const Segment& segment,
                             LayerTag tag) {
  if (segment.samples.size() != model.spec.input_length)
    throw ShapeMismatch("segment length " +
                        std::to_string(segment.samples.size()) +
                        " vs model input " +
                        std::to_string(model.spec.input_length));

  auto batch = nn::Tensor::from_values({1, segment.samples.size(), 1},
                                       segment.samples);
  nn::ForwardTaps taps;
  model.set_requires_grad(false);
  model_forward(model, batch, Mode::infer, 0, &taps);
  model.set_requires_grad(true);

  const std::size_t T = model.spec.gru_seq_len;
  ActivationMap map;
  map.layer = tag;
  map.segment_id = segment.source_record + ":" +
                   std::to_string(segment.start_index);
  map.bins.assign(T, 0.0);

  switch (tag) {
    case LayerTag::trunk_last_conv: {
      const std::size_t c = taps.trunk->shape[2];
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t ch = 0; ch < c; ++ch)
          map.bins[t] += taps.trunk->value[t * c + ch];
      break;
    }
    case LayerTag::gru: {
      const std::size_t u = taps.gru_states->shape[2];
      for (std::size_t t = 0; t < T; ++t) {
        double sum = 0.0;
        for (std::size_t j = 0; j < u; ++j)
          sum += std::abs(taps.gru_states->value[t * u + j]);
        map.bins[t] = taps.attention[t] * sum;
      }
      break;
    }
  }
  map.reconstructed = unpool_reconstruct(map.bins, model.spec.input_length);
  return map;
}

std::vector<double> unpool_reconstruct(std::span<const double> bins,
                                       std::size_t out_len) {
  if (bins.empty() || bins.size() > out_len)
    throw WrongBinCount(std::to_string(bins.size()) + " bins for length " +
                        std::to_string(out_len));
  const std::size_t span = out_len / bins.size();
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const std::size_t t = std::min(i / span, bins.size() - 1);
    out[i] = bins[t];
  }
  return out;
}

namespace {

void append_row(std::ostringstream& os, const char* name,
                std::span<const double> values) {
  os << name;
  for (double v : values) os << ',' << v;
  os << '\n';
}

void normalize_by_max(std::vector<double>& v) {
  double mx = 0.0;
  for (double x : v) mx = std::max(mx, std::abs(x));
  if (mx > 0.0)
    for (double& x : v) x /= mx;
}

}  // namespace

std::string inspection_csv(nn::BuiltModel& model, const Segment& segment,
                           bool normalize) {
  auto trunk = activation_map(model, segment, LayerTag::trunk_last_conv);
  auto gru = activation_map(model, segment, LayerTag::gru);
  std::ostringstream os;
  os.precision(10);
  append_row(os, "signal", segment.samples);
  append_row(os, "trunk_last_conv", trunk.reconstructed);
  append_row(os, "gru", gru.reconstructed);
  if (normalize) {
    // raw sums stay; the normalized copies ride along as extra rows
    normalize_by_max(trunk.reconstructed);
    normalize_by_max(gru.reconstructed);
    append_row(os, "trunk_last_conv_norm", trunk.reconstructed);
    append_row(os, "gru_norm", gru.reconstructed);
  }
  return os.str();
}

}  // namespace ecg
