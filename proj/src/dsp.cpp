#include "ecg/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace ecg {

void PreprocessConfig::validate() const {
  if (!(baseline_window_short > 0.0) ||
      !(baseline_window_short < baseline_window_long))
    throw InvalidValue("baseline windows need 0 < short < long");
  if (smoothing_window < 1 || smoothing_window % 2 == 0)
    throw InvalidValue("smoothing_window must be odd and >= 1");
  if (!(target_fs > 0.0)) throw InvalidValue("target_fs must be positive");
}

namespace {

// Mirror including the edge sample: index -1 -> 0, -2 -> 1, n -> n-1, ...
inline std::size_t reflect(long i, long n) {
  if (i < 0) i = -i - 1;
  if (i >= n) i = 2 * n - 1 - i;
  return static_cast<std::size_t>(i);
}

}  // namespace

std::vector<double> median_filter(std::span<const double> signal, int window) {
  if (window < 1 || window % 2 == 0)
    throw EvenWindow("window " + std::to_string(window) + " must be odd");
  const long n = static_cast<long>(signal.size());
  if (window > n)
    throw WindowLargerThanSignal("window " + std::to_string(window) +
                                 " > signal length " + std::to_string(n));
  const long half = window / 2;

  // Padded copy, then a sliding two-multiset median over it.
  std::vector<double> padded(signal.size() + 2 * static_cast<std::size_t>(half));
  for (long i = -half; i < n + half; ++i)
    padded[static_cast<std::size_t>(i + half)] = signal[reflect(i, n)];

  std::multiset<double> low, high;  // max-half (size half+1), min-half
  auto rebalance = [&]() {
    while (low.size() > high.size() + 1) {
      auto it = std::prev(low.end());
      high.insert(*it);
      low.erase(it);
    }
    while (high.size() > low.size()) {
      auto it = high.begin();
      low.insert(*it);
      high.erase(it);
    }
  };
  auto insert = [&](double v) {
    if (low.empty() || v <= *std::prev(low.end()))
      low.insert(v);
    else
      high.insert(v);
    rebalance();
  };
  auto remove = [&](double v) {
    auto it = low.find(v);
    if (it != low.end())
      low.erase(it);
    else
      high.erase(high.find(v));
    rebalance();
  };

  for (long i = 0; i < window; ++i) insert(padded[static_cast<std::size_t>(i)]);
  std::vector<double> out(signal.size());
  out[0] = *std::prev(low.end());
  for (long i = 1; i < n; ++i) {
    remove(padded[static_cast<std::size_t>(i - 1)]);
    insert(padded[static_cast<std::size_t>(i - 1 + window)]);
    out[static_cast<std::size_t>(i)] = *std::prev(low.end());
  }
  return out;
}

int median_window_samples(double seconds, double fs) {
  long w = std::lround(seconds * fs);
  if (w % 2 == 0) w += 1;
  return static_cast<int>(std::max<long>(w, 1));
}

std::vector<double> remove_baseline(std::span<const double> signal, double fs,
                                    const PreprocessConfig& cfg) {
  if (signal.empty()) throw EmptySignal("remove_baseline on empty signal");
  if (!(fs > 0.0)) throw InvalidValue("fs must be positive");
  const int w_short = median_window_samples(cfg.baseline_window_short, fs);
  const int w_long = median_window_samples(cfg.baseline_window_long, fs);
  auto baseline = median_filter(median_filter(signal, w_short), w_long);
  std::vector<double> out(signal.size());
  for (std::size_t i = 0; i < signal.size(); ++i)
    out[i] = signal[i] - baseline[i];
  return out;
}

std::vector<double> moving_average(std::span<const double> signal, int window) {
  if (window < 1) throw InvalidValue("window must be >= 1");
  const long n = static_cast<long>(signal.size());
  if (window > n)
    throw WindowLargerThanSignal("window " + std::to_string(window) +
                                 " > signal length " + std::to_string(n));
  const long left = (window - 1) / 2;
  std::vector<double> out(signal.size());
  for (long i = 0; i < n; ++i) {
    double sum = 0.0;
    for (long j = i - left; j < i - left + window; ++j)
      sum += signal[reflect(j, n)];
    out[static_cast<std::size_t>(i)] = sum / window;
  }
  return out;
}

std::vector<double> resample_linear(std::span<const double> signal,
                                    double fs_in, double fs_out) {
  if (signal.empty()) throw EmptySignal("resample on empty signal");
  if (!(fs_in > 0.0) || !(fs_out > 0.0))
    throw InvalidValue("sampling rates must be positive");
  const std::size_t n = signal.size();
  const auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * fs_out / fs_in));
  std::vector<double> out(out_len);
  const double step = fs_in / fs_out;
  for (std::size_t j = 0; j < out_len; ++j) {
    const double pos = static_cast<double>(j) * step;
    if (pos >= static_cast<double>(n - 1)) {
      out[j] = signal[n - 1];
      continue;
    }
    const auto k = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(k);
    out[j] = signal[k] + frac * (signal[k + 1] - signal[k]);
  }
  return out;
}

SignalRecord preprocess_record(const SignalRecord& rec,
                               const PreprocessConfig& cfg) {
  cfg.validate();
  auto x = remove_baseline(rec.samples, rec.fs, cfg);
  x = moving_average(x, cfg.smoothing_window);
  x = resample_linear(x, rec.fs, cfg.target_fs);
  SignalRecord out;
  out.record_id = rec.record_id;
  out.channel_name = rec.channel_name;
  out.fs = cfg.target_fs;
  out.samples = std::move(x);
  return out;
}

StandardizeStats standardize(std::span<Segment> segments) {
  std::size_t total = 0;
  for (const auto& s : segments) total += s.samples.size();
  if (total == 0) throw EmptyInput("standardize on empty collection");

  double sum = 0.0;
  for (const auto& s : segments)
    for (double v : s.samples) sum += v;
  const double mean = sum / static_cast<double>(total);

  double sq = 0.0;
  for (const auto& s : segments)
    for (double v : s.samples) sq += (v - mean) * (v - mean);
  const double var = sq / static_cast<double>(total);
  if (var == 0.0) throw DegenerateVariance("all samples equal");
  const double sd = std::sqrt(var);

  for (auto& s : segments)
    for (double& v : s.samples) v = (v - mean) / sd;
  return {mean, sd};
}

}  // namespace ecg
