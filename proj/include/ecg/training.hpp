#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ecg/model.hpp"
#include "ecg/segmentation.hpp"

namespace ecg {

struct TrainConfig {
  std::size_t max_epochs = 500;
  std::size_t batch_size = 50;
  std::size_t patience = 50;
  double lr = 5e-4;
  double dropout = 0.25;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  int precision = 64;  // 32 or 64

  void validate() const;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // index into epochs
  std::string stop_reason;     // "early_stop" or "max_epochs"
};

// Stratified split: per class with at least 2 segments, round(fraction *
// count) go to validation; smaller classes stay in training. Returns
// (train indices, validation indices).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(
    const std::vector<Segment>& segments, double fraction, std::uint64_t seed);

// Mini-batch Adam training with early stopping on validation loss; the
// parameters of the best validation epoch are restored before returning.
// Refuses segment sets tagged as test splits.
TrainHistory train(nn::BuiltModel& model, const SegmentSet& data,
                   const TrainConfig& cfg);

// Mean cross-entropy in infer mode; independent of batch size.
double evaluate_loss(nn::BuiltModel& model, const std::vector<Segment>& segments,
                     std::size_t batch_size);

// Batch [b, len, 1] plus one-hot targets from a slice of segments.
nn::TensorPtr make_batch(const std::vector<Segment>& segments,
                         const std::vector<std::size_t>& indices,
                         std::size_t begin, std::size_t end,
                         std::vector<double>* one_hot_targets);

void write_history_csv(const std::filesystem::path& path,
                       const TrainHistory& history);

}  // namespace ecg
