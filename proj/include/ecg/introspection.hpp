#pragma once

#include <span>
#include <string>
#include <vector>

#include "ecg/model.hpp"
#include "ecg/segmentation.hpp"

namespace ecg {

enum class LayerTag { trunk_last_conv, gru };

LayerTag layer_tag_from_string(const std::string& s);

struct ActivationMap {
  LayerTag layer = LayerTag::trunk_last_conv;
  std::vector<double> bins;           // one per trunk output position
  std::vector<double> reconstructed;  // expanded back onto the input grid
  std::string segment_id;
};

// trunk_last_conv: bin_t = sum over channels of the trunk activation.
// gru: bin_t = alpha_t * sum over units of |state[t, u]| (attention
// weighted).
ActivationMap activation_map(nn::BuiltModel& model, const Segment& segment,
                             LayerTag tag);

// Piecewise-constant expansion; each bin covers floor(out_len / bins)
// samples and the final bin absorbs the remainder (28 -> 1800 gives
// spans of 64 with a 72-sample last bin).
std::vector<double> unpool_reconstruct(std::span<const double> bins,
                                       std::size_t out_len = kSegmentLength);

// The three rows of an inspection dump: signal, trunk map, GRU map.
std::string inspection_csv(nn::BuiltModel& model, const Segment& segment,
                           bool normalize = false);

}  // namespace ecg
