#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ecg/ops.hpp"

namespace ecg::nn {

// All knobs of the network; defaults reproduce the full-size architecture.
struct ModelSpec {
  enum class Arch { branched, stacked };

  std::size_t input_length = 1800;
  std::size_t filter_size = 8;
  std::size_t initial_filters = 48;
  std::size_t growth_rate = 24;
  std::size_t convs_per_block = 4;
  std::size_t n_blocks = 4;
  double compression = 0.8;
  std::size_t pool_size = 4;
  std::vector<std::size_t> transition_strides{4, 4, 4, 1};
  std::size_t gru_units = 64;
  std::size_t gru_seq_len = 28;
  double dropout = 0.25;
  std::size_t n_classes = 5;
  Arch architecture = Arch::branched;

  // Shrunk configuration for gradient checks and fast training tests.
  static ModelSpec toy();

  struct Arithmetic {
    std::vector<std::size_t> lengths;   // input, then after each transition
    std::vector<std::size_t> channels;  // initial, then block/transition pairs
  };
  Arithmetic arithmetic() const;

  // Throws InvalidSpec when the pooling arithmetic does not reach
  // gru_seq_len or a field is out of range.
  void validate() const;
};

// Channel count after compression, rounded half up (276 * 0.8 -> 221).
std::size_t compressed_channels(std::size_t channels, double compression);

class BuiltModel {
public:
  ModelSpec spec;
  std::vector<Parameter> params;
  std::vector<std::pair<std::string, BatchNormState>> bn_states;

  struct ConvRef { std::size_t kernel = 0, bias = 0; };
  struct BnRef { std::size_t gamma = 0, beta = 0, state = 0; };
  struct BlockRef { std::vector<ConvRef> convs; std::vector<BnRef> bns; };
  struct TransRef { ConvRef conv; BnRef bn; std::size_t stride = 1; };
  struct GruRef { std::size_t wz = 0, uz = 0, bz = 0, wr = 0, ur = 0, br = 0,
                              wh = 0, uh = 0, bh = 0; };
  struct HeadRef { std::size_t w = 0, b = 0; };

  ConvRef init_conv;
  BnRef init_bn;
  std::vector<BlockRef> blocks;
  std::vector<TransRef> transitions;
  GruRef gru;
  std::size_t attn_w = 0, attn_b = 0;
  HeadRef head_gru;
  HeadRef head_avg;  // branched only

  const TensorPtr& p(std::size_t i) const { return params[i].tensor; }
  Parameter* find_param(const std::string& name);
  const Parameter* find_param(const std::string& name) const;
  void set_requires_grad(bool on);
  std::vector<std::string> parameter_names() const;

  struct Snapshot {
    std::vector<std::vector<double>> values;
    std::vector<std::pair<std::string, BatchNormState>> bn_states;
  };
  Snapshot snapshot() const;
  void restore(const Snapshot& s);
};

BuiltModel build_branched_model(const ModelSpec& spec, std::uint64_t seed);
BuiltModel build_stacked_model(const ModelSpec& spec, std::uint64_t seed);
BuiltModel build_model(const ModelSpec& spec, std::uint64_t seed);

// One dense block: every conv sees the concatenation of the block input
// and all previous conv outputs; conv -> batch norm -> ReLU.
TensorPtr dense_block_forward(BuiltModel& m, std::size_t block_index,
                              const TensorPtr& input, Mode mode);

// 1x1 conv to the compressed channel count, batch norm, ReLU, then
// average pooling when the stride is > 1.
TensorPtr transition_forward(BuiltModel& m, std::size_t trans_index,
                             const TensorPtr& input, Mode mode);

TensorPtr trunk_forward(BuiltModel& m, const TensorPtr& batch, Mode mode,
                        std::uint64_t seed);

struct BranchResult {
  TensorPtr probs;        // merged for branched, the GRU head for stacked
  TensorPtr probs_gru;
  TensorPtr probs_avg;    // null for stacked
  TensorPtr logits_gru;
  TensorPtr logits_avg;   // null for stacked
  TensorPtr gru_states;   // [b, T, units]
  std::vector<double> attention;  // [b * T]
};

BranchResult branch_forward(BuiltModel& m, const TensorPtr& trunk, Mode mode,
                            std::uint64_t seed);

struct ForwardTaps {
  TensorPtr trunk;
  TensorPtr gru_states;
  std::vector<double> attention;
};

TensorPtr model_forward(BuiltModel& m, const TensorPtr& batch, Mode mode,
                        std::uint64_t seed = 0, ForwardTaps* taps = nullptr);

// Cross-entropy on the model output; returns (probs, loss).
std::pair<TensorPtr, TensorPtr> model_loss(BuiltModel& m,
                                           const TensorPtr& batch,
                                           const std::vector<double>& targets,
                                           Mode mode, std::uint64_t seed = 0);

// Checkpoint container "ECGWTS1\0": u32 entry count, then named entries
// (u16 name length, name bytes, u8 rank, u64 dims, float64 payload).
// Model spec fields ride along as meta.* entries; Adam moments as
// "<name>#adam_m/v/t" when requested.
void save_checkpoint(const std::filesystem::path& path, const BuiltModel& m,
                     bool include_adam = false);
void load_checkpoint(const std::filesystem::path& path, BuiltModel& m,
                     bool allow_partial = false);

// Rebuilds a model from the spec stored in the checkpoint.
BuiltModel load_model(const std::filesystem::path& path);

}  // namespace ecg::nn
