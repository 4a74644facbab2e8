#pragma once

#include <span>
#include <vector>

#include "ecg/errors.hpp"
#include "ecg/record_io.hpp"
#include "ecg/segmentation.hpp"

namespace ecg {

struct PreprocessConfig {
  double baseline_window_short = 0.2;  // seconds
  double baseline_window_long = 0.6;   // seconds
  int smoothing_window = 7;            // samples
  double target_fs = 180.0;            // Hz

  void validate() const;
};

// Centered median with reflect padding (edge sample mirrored outward).
std::vector<double> median_filter(std::span<const double> signal, int window);

// signal - median(median(signal, w_short), w_long) with the windows
// derived from seconds as round(sec * fs), bumped to the next odd value.
std::vector<double> remove_baseline(std::span<const double> signal, double fs,
                                    const PreprocessConfig& cfg = {});

int median_window_samples(double seconds, double fs);

// Centered uniform mean with reflect padding.
std::vector<double> moving_average(std::span<const double> signal, int window);

// Linear interpolation onto the fs_out grid; output length
// round(len * fs_out / fs_in); positions beyond the last input sample
// clamp to it.
std::vector<double> resample_linear(std::span<const double> signal,
                                    double fs_in, double fs_out);

// Fixed pipeline order: baseline removal, moving average, resample.
SignalRecord preprocess_record(const SignalRecord& rec,
                               const PreprocessConfig& cfg = {});

struct StandardizeStats {
  double mean = 0.0;
  double stddev = 1.0;
};

// One mean/std pooled over every sample of the collection; each sample
// becomes (x - mean) / std.
StandardizeStats standardize(std::span<Segment> segments);

}  // namespace ecg
