#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ecg/evaluation.hpp"
#include "ecg/random.hpp"

using namespace ecg;

namespace {

// Independent brute-force evaluator used as the metric oracle.
struct BruteMetrics {
  long tp, fp, tn, fn;
  double acc, sen, spe, ppv, f1;
};

BruteMetrics brute_force(const ConfusionMatrix& cm, int cls) {
  BruteMetrics m{};
  long total = 0;
  for (int i = 0; i < kNumClasses; ++i)
    for (int j = 0; j < kNumClasses; ++j) {
      const long v = cm.counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      total += v;
      if (i == cls && j == cls) m.tp += v;
      else if (i == cls) m.fn += v;
      else if (j == cls) m.fp += v;
      else m.tn += v;
    }
  auto safe = [](long a, long b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  m.acc = safe(m.tp + m.tn, total);
  m.sen = safe(m.tp, m.tp + m.fn);
  m.spe = safe(m.tn, m.fp + m.tn);
  m.ppv = safe(m.tp, m.fp + m.tp);
  m.f1 = (m.sen + m.ppv) == 0.0 ? 0.0 : 2.0 * m.sen * m.ppv / (m.sen + m.ppv);
  return m;
}

}  // namespace

TEST_CASE("confusion_matrix tallies, diagonal and errors") {
  std::vector<AamiClass> truth = {AamiClass::N, AamiClass::VEB, AamiClass::SVEB};
  auto perfect = confusion_matrix(truth, truth);
  CHECK(perfect.total() == 3);
  CHECK(perfect.counts[0][0] == 1);
  CHECK(perfect.counts[2][2] == 1);
  CHECK(perfect.counts[1][1] == 1);
  CHECK(perfect.counts[0][1] == 0);

  auto empty = confusion_matrix({}, {});
  CHECK(empty.total() == 0);

  std::vector<AamiClass> shorter = {AamiClass::N};
  CHECK_THROWS_AS(confusion_matrix(shorter, truth), LengthMismatch);
}

TEST_CASE("confusion_matrix matches a counting oracle on random labels") {
  RandomEngine rng(61);
  std::vector<AamiClass> truth, pred;
  long tally[kNumClasses][kNumClasses] = {};
  for (int i = 0; i < 1000; ++i) {
    const auto t = static_cast<int>(rng.below(kNumClasses));
    const auto p = static_cast<int>(rng.below(kNumClasses));
    truth.push_back(static_cast<AamiClass>(t));
    pred.push_back(static_cast<AamiClass>(p));
    tally[t][p]++;
  }
  auto cm = confusion_matrix(pred, truth);
  for (int i = 0; i < kNumClasses; ++i)
    for (int j = 0; j < kNumClasses; ++j)
      CHECK(cm.counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] ==
            tally[i][j]);
}

TEST_CASE("class_metrics reproduces the published F1 pairs") {
  CHECK(std::abs(f1_score(75.9, 38.5) - 51.08) <= 0.02);
  CHECK(std::abs(f1_score(62.70, 61.21) - 61.94) <= 0.02);
}

TEST_CASE("class_metrics equals the brute-force evaluator on random matrices") {
  RandomEngine rng(67);
  for (int trial = 0; trial < 1000; ++trial) {
    ConfusionMatrix cm;
    for (auto& row : cm.counts)
      for (auto& v : row) v = static_cast<long>(rng.below(40));
    for (int c = 0; c < kNumClasses; ++c) {
      auto got = class_metrics(cm, static_cast<AamiClass>(c));
      auto want = brute_force(cm, c);
      CHECK(got.tp == want.tp);
      CHECK(got.fp == want.fp);
      CHECK(got.tn == want.tn);
      CHECK(got.fn == want.fn);
      CHECK(got.acc == want.acc);
      CHECK(got.sen == want.sen);
      CHECK(got.spe == want.spe);
      CHECK(got.ppv == want.ppv);
      CHECK(got.f1 == want.f1);
    }
  }
}

TEST_CASE("one-vs-rest counts satisfy the exact integer identities") {
  RandomEngine rng(71);
  ConfusionMatrix cm;
  for (auto& row : cm.counts)
    for (auto& v : row) v = static_cast<long>(rng.below(100));
  const long total = cm.total();
  for (int c = 0; c < kNumClasses; ++c) {
    auto m = class_metrics(cm, static_cast<AamiClass>(c));
    long row = 0, col = 0;
    for (int j = 0; j < kNumClasses; ++j) {
      row += cm.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
      col += cm.counts[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
    }
    CHECK(m.tp + m.fn == row);
    CHECK(m.tp + m.fp == col);
    CHECK(m.tp + m.fp + m.tn + m.fn == total);
  }
}

TEST_CASE("a diagonal matrix gives perfect metrics for supported classes") {
  ConfusionMatrix cm;
  for (int c = 0; c < kNumClasses; ++c)
    cm.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)] = 10 + c;
  for (int c = 0; c < kNumClasses; ++c) {
    auto m = class_metrics(cm, static_cast<AamiClass>(c));
    CHECK(m.acc == 1.0);
    CHECK(m.sen == 1.0);
    CHECK(m.spe == 1.0);
    CHECK(m.ppv == 1.0);
    CHECK(m.f1 == 1.0);
    CHECK(!m.degenerate);
  }
}

TEST_CASE("0/0 ratios report zero with the degenerate flag") {
  ConfusionMatrix cm;
  cm.counts[0][0] = 50;  // only class N present and predicted
  auto m = class_metrics(cm, AamiClass::F);
  CHECK(m.sen == 0.0);
  CHECK(m.ppv == 0.0);
  CHECK(m.f1 == 0.0);
  CHECK(m.degenerate);
}

TEST_CASE("report row matches the golden Table-4-style text") {
  ExperimentRow row;
  row.tag = "T1";
  row.cls = AamiClass::SVEB;
  row.metrics.acc = 0.9361;
  row.metrics.sen = 0.6270;
  row.metrics.spe = 0.9640;
  row.metrics.ppv = 0.6121;
  row.metrics.f1 = 0.6194;

  const ExperimentRow rows[] = {row};
  const std::string text = format_report(rows);
  const std::string golden =
      "tag   class       Acc     Sen     Spe     Ppv      F1\n"
      "T1    SVEB      93.61   62.70   96.40   61.21   61.94\n";
  CHECK(text == golden);

  const std::string csv = format_csv(rows);
  CHECK(csv ==
        "tag,class,acc,sen,spe,ppv,f1\n"
        "T1,SVEB,93.61,62.70,96.40,61.21,61.94\n");
}

TEST_CASE("empty result set renders a header-only table") {
  CHECK(format_report({}) ==
        "tag   class       Acc     Sen     Spe     Ppv      F1\n");
  CHECK(format_csv({}) == "tag,class,acc,sen,spe,ppv,f1\n");
}

TEST_CASE("CSV re-parse recovers the values within rounding") {
  RandomEngine rng(73);
  std::vector<ExperimentRow> rows;
  for (int i = 0; i < 5; ++i) {
    ExperimentRow r;
    r.tag = "T" + std::to_string(i);
    r.cls = AamiClass::VEB;
    r.metrics.acc = rng.uniform();
    r.metrics.sen = rng.uniform();
    r.metrics.spe = rng.uniform();
    r.metrics.ppv = rng.uniform();
    r.metrics.f1 = rng.uniform();
    rows.push_back(r);
  }
  std::istringstream csv(format_csv(rows));
  std::string line;
  std::getline(csv, line);  // header
  for (const auto& r : rows) {
    std::getline(csv, line);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::string tag, cls;
    double acc, sen, spe, ppv, f1;
    ls >> tag >> cls >> acc >> sen >> spe >> ppv >> f1;
    CHECK(tag == r.tag);
    CHECK(std::abs(acc - r.metrics.acc * 100.0) <= 0.005 + 1e-12);
    CHECK(std::abs(sen - r.metrics.sen * 100.0) <= 0.005 + 1e-12);
    CHECK(std::abs(spe - r.metrics.spe * 100.0) <= 0.005 + 1e-12);
    CHECK(std::abs(ppv - r.metrics.ppv * 100.0) <= 0.005 + 1e-12);
    CHECK(std::abs(f1 - r.metrics.f1 * 100.0) <= 0.005 + 1e-12);
  }
}

TEST_CASE("metrics are invariant under evaluation order") {
  RandomEngine rng(79);
  std::vector<AamiClass> truth, pred;
  for (int i = 0; i < 300; ++i) {
    truth.push_back(static_cast<AamiClass>(rng.below(kNumClasses)));
    pred.push_back(static_cast<AamiClass>(rng.below(kNumClasses)));
  }
  auto base = confusion_matrix(pred, truth);

  std::vector<std::size_t> order(truth.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<AamiClass> truth2, pred2;
  for (auto i : order) {
    truth2.push_back(truth[i]);
    pred2.push_back(pred[i]);
  }
  auto shuffled = confusion_matrix(pred2, truth2);
  CHECK(base.counts == shuffled.counts);
}
