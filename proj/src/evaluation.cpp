#include "ecg/evaluation.hpp"

#include <cstdio>
#include <sstream>

namespace ecg {

long ConfusionMatrix::total() const {
  long t = 0;
  for (const auto& row : counts)
    for (long v : row) t += v;
  return t;
}

ConfusionMatrix confusion_matrix(std::span<const AamiClass> predicted,
                                 std::span<const AamiClass> truth) {
  if (predicted.size() != truth.size())
    throw LengthMismatch(std::to_string(predicted.size()) + " predictions vs " +
                         std::to_string(truth.size()) + " labels");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i)
    cm.counts[static_cast<std::size_t>(truth[i])]
             [static_cast<std::size_t>(predicted[i])]++;
  return cm;
}

ClassMetrics class_metrics(const ConfusionMatrix& cm, AamiClass cls) {
  const auto c = static_cast<std::size_t>(cls);
  ClassMetrics m;
  long row = 0, col = 0;
  const long total = cm.total();
  for (std::size_t j = 0; j < kNumClasses; ++j) {
    row += cm.counts[c][j];
    col += cm.counts[j][c];
  }
  m.tp = cm.counts[c][c];
  m.fn = row - m.tp;
  m.fp = col - m.tp;
  m.tn = total - m.tp - m.fn - m.fp;

  auto ratio = [&m](long num, long denom) {
    if (denom == 0) {
      m.degenerate = true;
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(denom);
  };
  m.acc = ratio(m.tp + m.tn, total);
  m.sen = ratio(m.tp, m.tp + m.fn);
  m.spe = ratio(m.tn, m.fp + m.tn);
  m.ppv = ratio(m.tp, m.fp + m.tp);
  if (m.sen + m.ppv == 0.0) {
    m.degenerate = true;
    m.f1 = 0.0;
  } else {
    m.f1 = f1_score(m.sen, m.ppv);
  }
  return m;
}

double f1_score(double sen, double ppv) {
  if (sen + ppv == 0.0) return 0.0;
  return 2.0 * sen * ppv / (sen + ppv);
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v * 100.0);
  return buf;
}

}  // namespace

std::string format_report(std::span<const ExperimentRow> rows) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-6s%-7s%8s%8s%8s%8s%8s\n", "tag",
                "class", "Acc", "Sen", "Spe", "Ppv", "F1");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-6s%-7s%8s%8s%8s%8s%8s\n",
                  r.tag.c_str(), to_string(r.cls), pct(r.metrics.acc).c_str(),
                  pct(r.metrics.sen).c_str(), pct(r.metrics.spe).c_str(),
                  pct(r.metrics.ppv).c_str(), pct(r.metrics.f1).c_str());
    os << line;
  }
  return os.str();
}

std::string format_csv(std::span<const ExperimentRow> rows) {
  std::ostringstream os;
  os << "tag,class,acc,sen,spe,ppv,f1\n";
  for (const auto& r : rows) {
    os << r.tag << ',' << to_string(r.cls) << ',' << pct(r.metrics.acc) << ','
       << pct(r.metrics.sen) << ',' << pct(r.metrics.spe) << ','
       << pct(r.metrics.ppv) << ',' << pct(r.metrics.f1) << '\n';
  }
  return os.str();
}

}  // namespace ecg
