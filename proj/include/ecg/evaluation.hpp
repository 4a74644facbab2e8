#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "ecg/segmentation.hpp"

namespace ecg {

struct ConfusionMatrix {
  // counts[true][predicted]
  std::array<std::array<long, kNumClasses>, kNumClasses> counts{};

  long total() const;
};

ConfusionMatrix confusion_matrix(std::span<const AamiClass> predicted,
                                 std::span<const AamiClass> truth);

struct ClassMetrics {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  double acc = 0.0, sen = 0.0, spe = 0.0, ppv = 0.0, f1 = 0.0;
  bool degenerate = false;  // some ratio was 0/0 and reported as 0
};

// One-vs-rest reduction of the 5-class matrix for one class.
ClassMetrics class_metrics(const ConfusionMatrix& cm, AamiClass cls);

// F1 from percentages (or fractions; any common scale).
double f1_score(double sen, double ppv);

struct ExperimentRow {
  std::string tag;
  AamiClass cls = AamiClass::N;
  ClassMetrics metrics;
};

// Fixed-width table, values x100 rounded to 2 decimals.
std::string format_report(std::span<const ExperimentRow> rows);
std::string format_csv(std::span<const ExperimentRow> rows);

}  // namespace ecg
