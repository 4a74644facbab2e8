#include "ecg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ecg/random.hpp"

namespace ecg {

using nn::Mode;

void TrainConfig::validate() const {
  if (patience > max_epochs)
    throw InvalidValue("patience must be <= max_epochs");
  if (batch_size < 1) throw InvalidValue("batch_size must be >= 1");
  if (!(lr > 0.0)) throw InvalidValue("lr must be positive");
  if (!(validation_fraction > 0.0 && validation_fraction < 0.5))
    throw InvalidValue("validation_fraction must be in (0, 0.5)");
  if (precision != 32 && precision != 64)
    throw InvalidValue("precision must be 32 or 64");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw InvalidValue("dropout must be in [0, 1)");
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(
    const std::vector<Segment>& segments, double fraction, std::uint64_t seed) {
  if (segments.empty()) throw EmptyInput("split_validation on empty set");
  if (!(fraction > 0.0 && fraction < 0.5))
    throw InvalidValue("fraction must be in (0, 0.5)");

  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < segments.size(); ++i)
    by_class[static_cast<std::size_t>(segments[i].label)].push_back(i);

  RandomEngine rng(seed);
  std::vector<std::size_t> train_idx, val_idx;
  for (auto& idx : by_class) {
    if (idx.empty()) continue;
    rng.shuffle(idx);
    std::size_t take = 0;
    if (idx.size() >= 2) {
      take = static_cast<std::size_t>(
          std::lround(fraction * static_cast<double>(idx.size())));
      take = std::min(take, idx.size() - 1);
    }
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < take ? val_idx : train_idx).push_back(idx[i]);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  return {std::move(train_idx), std::move(val_idx)};
}

nn::TensorPtr make_batch(const std::vector<Segment>& segments,
                         const std::vector<std::size_t>& indices,
                         std::size_t begin, std::size_t end,
                         std::vector<double>* one_hot_targets) {
  const std::size_t b = end - begin;
  const std::size_t len = segments[indices[begin]].samples.size();
  auto batch = nn::Tensor::create({b, len, 1});
  if (one_hot_targets) one_hot_targets->assign(b * kNumClasses, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    const Segment& s = segments[indices[begin + i]];
    if (s.samples.size() != len)
      throw LengthMismatch("segments of different lengths in one batch");
    std::copy(s.samples.begin(), s.samples.end(),
              batch->value.begin() + i * len);
    if (one_hot_targets)
      (*one_hot_targets)[i * kNumClasses + static_cast<std::size_t>(s.label)] =
          1.0;
  }
  nn::quantize(batch->value);
  return batch;
}

namespace {

double dataset_loss(nn::BuiltModel& model, const std::vector<Segment>& segments,
                    const std::vector<std::size_t>& indices,
                    std::size_t batch_size) {
  double total = 0.0;
  for (std::size_t begin = 0; begin < indices.size(); begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, indices.size());
    std::vector<double> targets;
    auto batch = make_batch(segments, indices, begin, end, &targets);
    auto [probs, loss] = nn::model_loss(model, batch, targets, Mode::infer);
    total += loss->value[0] * static_cast<double>(end - begin);
  }
  return total / static_cast<double>(indices.size());
}

}  // namespace

double evaluate_loss(nn::BuiltModel& model, const std::vector<Segment>& segments,
                     std::size_t batch_size) {
  if (segments.empty()) throw EmptyInput("evaluate_loss on empty set");
  std::vector<std::size_t> idx(segments.size());
  std::iota(idx.begin(), idx.end(), 0);
  return dataset_loss(model, segments, idx, batch_size);
}

TrainHistory train(nn::BuiltModel& model, const SegmentSet& data,
                   const TrainConfig& cfg) {
  cfg.validate();
  if (data.role == SplitRole::test)
    throw TestSplitInTraining("split '" + data.name +
                              "' is tagged as a test split");

  TrainHistory history;
  history.stop_reason = "max_epochs";
  if (cfg.max_epochs == 0) return history;
  if (data.segments.empty()) throw EmptyInput("train on empty segment set");

  nn::set_precision(cfg.precision == 32 ? nn::Precision::f32
                                        : nn::Precision::f64);
  model.spec.dropout = cfg.dropout;
  model.set_requires_grad(true);

  auto [train_idx, val_idx] =
      split_validation(data.segments, cfg.validation_fraction, cfg.seed);

  nn::AdamConfig adam;
  adam.lr = cfg.lr;

  double best_val = std::numeric_limits<double>::infinity();
  auto best = model.snapshot();

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    RandomEngine shuffle_rng(mix_seed(cfg.seed, epoch + 1));
    shuffle_rng.shuffle(train_idx);

    double train_loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < train_idx.size();
         begin += cfg.batch_size, ++n_batches) {
      const std::size_t end =
          std::min(begin + cfg.batch_size, train_idx.size());
      std::vector<double> targets;
      auto batch = make_batch(data.segments, train_idx, begin, end, &targets);
      const std::uint64_t drop_seed =
          mix_seed(mix_seed(cfg.seed, epoch + 1), n_batches + 1);
      auto [probs, loss] =
          nn::model_loss(model, batch, targets, Mode::train, drop_seed);
      for (auto& p : model.params) p.tensor->zero_grad();
      nn::backward(loss);
      nn::adam_step(model.params, adam);
      train_loss_sum += loss->value[0] * static_cast<double>(end - begin);
    }

    EpochStats stats;
    stats.train_loss = train_loss_sum / static_cast<double>(train_idx.size());
    stats.val_loss = val_idx.empty()
                         ? stats.train_loss
                         : dataset_loss(model, data.segments, val_idx,
                                        cfg.batch_size);
    stats.seconds = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    history.epochs.push_back(stats);

    if (stats.val_loss < best_val - 1e-6) {
      best_val = stats.val_loss;
      history.best_epoch = history.epochs.size() - 1;
      best = model.snapshot();
    } else if (history.epochs.size() - 1 - history.best_epoch >= cfg.patience) {
      history.stop_reason = "early_stop";
      break;
    }
  }

  model.restore(best);
  return history;
}

void write_history_csv(const std::filesystem::path& path,
                       const TrainHistory& history) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << "epoch,train_loss,val_loss,seconds\n";
  f.precision(17);
  for (std::size_t i = 0; i < history.epochs.size(); ++i) {
    const auto& e = history.epochs[i];
    f << i << ',' << e.train_loss << ',' << e.val_loss << ',' << e.seconds
      << '\n';
  }
}

}  // namespace ecg
