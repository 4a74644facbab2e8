#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecg/errors.hpp"
#include "ecg/record_io.hpp"

namespace ecg {

// Five AAMI classes of interest, in the fixed one-hot encoding order.
enum class AamiClass : std::uint8_t { N = 0, SVEB = 1, VEB = 2, F = 3, Q = 4 };

inline constexpr int kNumClasses = 5;
inline constexpr std::size_t kSegmentLength = 1800;  // 10 s at 180 Hz
inline constexpr double kTargetFs = 180.0;

const char* to_string(AamiClass c);
std::optional<AamiClass> aami_class_from_string(const std::string& s);

// MIT-BIH beat symbol -> AAMI class; nullopt for non-beat annotations
// (rhythm changes, signal quality marks, ...).
std::optional<AamiClass> map_to_aami(char symbol);

using ClassCounts = std::array<long, kNumClasses>;

struct Segment {
  std::vector<double> samples;  // standardized 180 Hz window
  AamiClass label = AamiClass::N;
  std::string source_record;
  long start_index = 0;  // 180 Hz frame of the window start

  std::array<double, kNumClasses> one_hot() const {
    std::array<double, kNumClasses> v{};
    v[static_cast<std::size_t>(label)] = 1.0;
    return v;
  }
};

enum class SplitRole { train, test, unspecified };

// A named dataset split (DS1, DST1, DS2, DST2 or a sampled derivative).
struct SegmentSet {
  std::string name;
  SplitRole role = SplitRole::unspecified;
  std::vector<std::string> record_ids;
  std::vector<Segment> segments;
  double norm_mean = 0.0;  // standardization statistics for this set
  double norm_std = 1.0;

  ClassCounts class_counts() const;
};

// Window cut at a rescaled beat-annotation index, before labeling.
struct UnlabeledSegment {
  std::vector<double> samples;
  long start = 0;
  ClassCounts counts{};  // AAMI multiset of beat annotations in the window
};

// Cuts one window per beat annotation whose rescaled index allows the
// full window to fit. counts collects every beat annotation landing in
// [start, start + window_len).
std::vector<UnlabeledSegment> build_segments(
    const SignalRecord& record_180hz, std::span<const Annotation> annotations,
    double fs_orig, std::size_t window_len = kSegmentLength);

// Majority class of the window; N is discarded when any other class is
// present; ties break by severity VEB > SVEB > F > Q.
AamiClass label_segment(const ClassCounts& counts);

std::vector<Segment> segment_record(const SignalRecord& record_180hz,
                                    std::span<const Annotation> annotations,
                                    double fs_orig,
                                    std::size_t window_len = kSegmentLength);

// Per-record data access used by dataset assembly.
struct RecordStore {
  std::function<SignalRecord(const std::string& id)> load_preprocessed;
  std::function<std::vector<Annotation>(const std::string& id)> load_annotations;
  std::function<double(const std::string& id)> original_fs;
};

// Assembles and standardizes one split. Throws MissingRecord when a
// listed record cannot be loaded.
SegmentSet build_dataset(const std::string& split_name,
                         std::span<const std::string> record_ids,
                         const RecordStore& store);

// Per-class draw without replacement up to each class target (or the
// class supply, whichever is smaller); output order is shuffled.
std::vector<Segment> balanced_sample(std::span<const SegmentSet> splits,
                                     const ClassCounts& per_class_targets,
                                     std::uint64_t seed);

// mitdb inter-patient record lists; the four paced records are excluded
// from both.
const std::vector<std::string>& ds1_records();
const std::vector<std::string>& dst1_records();
const std::vector<std::string>& mitdb_paced_records();

// svdb has no published split: even positions of the sorted id list form
// the training half, odd positions the testing half.
std::pair<std::vector<std::string>, std::vector<std::string>> svdb_split(
    std::vector<std::string> record_ids);

// Segment store "ECGSEG1\0": u64 count, u32 sample_len, u32 class_count;
// per segment sample_len 4-byte floats, 1 label byte, u16 id length + id
// bytes, 8-byte start index (all little-endian).
void write_segment_store(const std::filesystem::path& path,
                         const SegmentSet& set);
SegmentSet read_segment_store(const std::filesystem::path& path);

}  // namespace ecg
