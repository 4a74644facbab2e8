#include "ecg/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ecg/dsp.hpp"
#include "ecg/io_util.hpp"
#include "ecg/random.hpp"

namespace ecg {

const char* to_string(AamiClass c) {
  switch (c) {
    case AamiClass::N: return "N";
    case AamiClass::SVEB: return "SVEB";
    case AamiClass::VEB: return "VEB";
    case AamiClass::F: return "F";
    case AamiClass::Q: return "Q";
  }
  return "?";
}

std::optional<AamiClass> aami_class_from_string(const std::string& s) {
  for (int i = 0; i < kNumClasses; ++i) {
    auto c = static_cast<AamiClass>(i);
    if (s == to_string(c)) return c;
  }
  return std::nullopt;
}

std::optional<AamiClass> map_to_aami(char symbol) {
  switch (symbol) {
    case 'N': case 'L': case 'R': case 'e': case 'j':
      return AamiClass::N;
    case 'A': case 'a': case 'J': case 'S':
      return AamiClass::SVEB;
    case 'V': case 'E':
      return AamiClass::VEB;
    case 'F':
      return AamiClass::F;
    case '/': case 'f': case 'Q':
      return AamiClass::Q;
    default:
      return std::nullopt;
  }
}

ClassCounts SegmentSet::class_counts() const {
  ClassCounts c{};
  for (const auto& s : segments) c[static_cast<std::size_t>(s.label)]++;
  return c;
}

std::vector<UnlabeledSegment> build_segments(
    const SignalRecord& record_180hz, std::span<const Annotation> annotations,
    double fs_orig, std::size_t window_len) {
  if (!(fs_orig > 0.0)) throw InvalidValue("fs_orig must be positive");
  const long n = static_cast<long>(record_180hz.samples.size());
  const long w = static_cast<long>(window_len);
  const double ratio = kTargetFs / fs_orig;

  // Rescale every beat annotation index onto the 180 Hz grid once.
  std::vector<std::pair<long, AamiClass>> beats;
  beats.reserve(annotations.size());
  for (const auto& a : annotations) {
    auto cls = map_to_aami(a.symbol);
    if (!cls) continue;
    beats.emplace_back(std::lround(static_cast<double>(a.sample_index) * ratio),
                       *cls);
  }

  std::vector<UnlabeledSegment> out;
  std::size_t lo = 0;  // first beat with index >= window start
  for (std::size_t k = 0; k < beats.size(); ++k) {
    const long start = beats[k].first;
    if (start < 0 || start + w > n) continue;
    UnlabeledSegment seg;
    seg.start = start;
    while (lo < beats.size() && beats[lo].first < start) ++lo;
    for (std::size_t i = lo; i < beats.size() && beats[i].first < start + w; ++i)
      seg.counts[static_cast<std::size_t>(beats[i].second)]++;
    seg.samples.assign(
        record_180hz.samples.begin() + start,
        record_180hz.samples.begin() + start + w);
    out.push_back(std::move(seg));
  }
  return out;
}

AamiClass label_segment(const ClassCounts& counts) {
  long total = 0;
  for (long c : counts) total += c;
  if (total == 0) throw EmptyWindow("no beat annotations in window");

  ClassCounts c = counts;
  bool non_n = false;
  for (int i = 1; i < kNumClasses; ++i) non_n |= c[static_cast<std::size_t>(i)] > 0;
  if (non_n) c[static_cast<std::size_t>(AamiClass::N)] = 0;

  // Severity order breaks ties: VEB > SVEB > F > Q (> N, the sole-class case).
  static constexpr AamiClass severity[] = {AamiClass::VEB, AamiClass::SVEB,
                                           AamiClass::F, AamiClass::Q,
                                           AamiClass::N};
  AamiClass best = AamiClass::N;
  long best_count = -1;
  for (AamiClass cls : severity) {
    const long k = c[static_cast<std::size_t>(cls)];
    if (k > best_count) {
      best = cls;
      best_count = k;
    }
  }
  return best;
}

std::vector<Segment> segment_record(const SignalRecord& record_180hz,
                                    std::span<const Annotation> annotations,
                                    double fs_orig, std::size_t window_len) {
  auto windows = build_segments(record_180hz, annotations, fs_orig, window_len);
  std::vector<Segment> out;
  out.reserve(windows.size());
  for (auto& w : windows) {
    Segment s;
    s.samples = std::move(w.samples);
    s.label = label_segment(w.counts);
    s.source_record = record_180hz.record_id;
    s.start_index = w.start;
    out.push_back(std::move(s));
  }
  return out;
}

SegmentSet build_dataset(const std::string& split_name,
                         std::span<const std::string> record_ids,
                         const RecordStore& store) {
  SegmentSet set;
  set.name = split_name;
  set.record_ids.assign(record_ids.begin(), record_ids.end());
  for (const auto& id : record_ids) {
    SignalRecord rec;
    std::vector<Annotation> anns;
    double fs_orig = 0.0;
    try {
      rec = store.load_preprocessed(id);
      anns = store.load_annotations(id);
      fs_orig = store.original_fs(id);
    } catch (const Error& e) {
      throw MissingRecord("record " + id + " for split " + split_name + " (" +
                          e.what() + ")");
    }
    auto segs = segment_record(rec, anns, fs_orig);
    for (auto& s : segs) set.segments.push_back(std::move(s));
  }
  if (!set.segments.empty()) {
    auto stats = standardize(set.segments);
    set.norm_mean = stats.mean;
    set.norm_std = stats.stddev;
  }
  return set;
}

std::vector<Segment> balanced_sample(std::span<const SegmentSet> splits,
                                     const ClassCounts& per_class_targets,
                                     std::uint64_t seed) {
  // Pool per class as (split, segment) indices in deterministic order.
  std::array<std::vector<std::pair<std::size_t, std::size_t>>, kNumClasses> pool;
  for (std::size_t s = 0; s < splits.size(); ++s)
    for (std::size_t i = 0; i < splits[s].segments.size(); ++i)
      pool[static_cast<std::size_t>(splits[s].segments[i].label)].emplace_back(s, i);

  RandomEngine rng(seed);
  std::vector<Segment> out;
  for (int c = 0; c < kNumClasses; ++c) {
    auto& candidates = pool[static_cast<std::size_t>(c)];
    rng.shuffle(candidates);
    const auto want = static_cast<std::size_t>(
        std::max<long>(per_class_targets[static_cast<std::size_t>(c)], 0));
    const std::size_t take = std::min(want, candidates.size());
    for (std::size_t i = 0; i < take; ++i)
      out.push_back(splits[candidates[i].first].segments[candidates[i].second]);
  }
  rng.shuffle(out);
  return out;
}

const std::vector<std::string>& ds1_records() {
  static const std::vector<std::string> ids = {
      "101", "106", "108", "109", "112", "114", "115", "116",
      "118", "119", "122", "124", "201", "203", "205", "207",
      "208", "209", "215", "220", "223", "230"};
  return ids;
}

const std::vector<std::string>& dst1_records() {
  static const std::vector<std::string> ids = {
      "100", "103", "105", "111", "113", "117", "121", "123",
      "200", "202", "210", "212", "213", "214", "219", "221",
      "222", "228", "231", "232", "233", "234"};
  return ids;
}

const std::vector<std::string>& mitdb_paced_records() {
  static const std::vector<std::string> ids = {"102", "104", "107", "217"};
  return ids;
}

std::pair<std::vector<std::string>, std::vector<std::string>> svdb_split(
    std::vector<std::string> record_ids) {
  std::sort(record_ids.begin(), record_ids.end());
  std::vector<std::string> train, test;
  for (std::size_t i = 0; i < record_ids.size(); ++i)
    (i % 2 == 0 ? train : test).push_back(record_ids[i]);
  return {std::move(train), std::move(test)};
}

static const char kSegMagic[8] = {'E', 'C', 'G', 'S', 'E', 'G', '1', '\0'};

void write_segment_store(const std::filesystem::path& path,
                         const SegmentSet& set) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  io::write_magic(f, kSegMagic);
  io::write_le<std::uint64_t>(f, set.segments.size());
  const std::uint32_t sample_len =
      set.segments.empty() ? static_cast<std::uint32_t>(kSegmentLength)
                           : static_cast<std::uint32_t>(set.segments[0].samples.size());
  io::write_le<std::uint32_t>(f, sample_len);
  io::write_le<std::uint32_t>(f, kNumClasses);
  for (const auto& s : set.segments) {
    if (s.samples.size() != sample_len)
      throw LengthMismatch("segment length " + std::to_string(s.samples.size()) +
                           " != store sample_len " + std::to_string(sample_len));
    for (double v : s.samples) io::write_le<float>(f, static_cast<float>(v));
    io::write_le<std::uint8_t>(f, static_cast<std::uint8_t>(s.label));
    io::write_le<std::uint16_t>(f,
                                static_cast<std::uint16_t>(s.source_record.size()));
    io::write_bytes(f, s.source_record.data(), s.source_record.size());
    io::write_le<std::int64_t>(f, s.start_index);
  }
}

SegmentSet read_segment_store(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  io::expect_magic(f, kSegMagic, path.string());
  SegmentSet set;
  set.name = path.stem().string();
  const auto count = io::read_le<std::uint64_t>(f);
  const auto sample_len = io::read_le<std::uint32_t>(f);
  const auto n_classes = io::read_le<std::uint32_t>(f);
  if (n_classes != kNumClasses)
    throw DataError(path.string() + ": unexpected class count " +
                    std::to_string(n_classes));
  set.segments.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Segment s;
    s.samples.resize(sample_len);
    for (std::uint32_t j = 0; j < sample_len; ++j)
      s.samples[j] = io::read_le<float>(f);
    const auto label = io::read_le<std::uint8_t>(f);
    if (label >= kNumClasses)
      throw DataError(path.string() + ": bad label byte");
    s.label = static_cast<AamiClass>(label);
    const auto id_len = io::read_le<std::uint16_t>(f);
    std::string id(id_len, '\0');
    io::read_bytes(f, id.data(), id_len);
    s.source_record = std::move(id);
    s.start_index = io::read_le<std::int64_t>(f);
    set.segments.push_back(std::move(s));
  }
  return set;
}

}  // namespace ecg
