#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ecg/errors.hpp"

namespace ecg {

struct ChannelInfo {
  std::string file;
  int format_code = 0;
  double adc_gain = 0.0;   // adu per mV
  int adc_zero = 0;        // adu value at 0 mV
  std::string name;
};

struct RecordHeader {
  std::string record_id;
  int n_signals = 0;
  double fs = 0.0;         // Hz
  long n_samples = 0;      // per channel
  std::vector<ChannelInfo> channels;
};

// One channel of a record, converted to millivolts.
struct SignalRecord {
  std::string record_id;
  std::string channel_name;
  double fs = 0.0;
  std::vector<double> samples;  // mV
};

struct Annotation {
  long sample_index = 0;  // index into the original-rate signal
  char symbol = '\0';
};

// First line: "record n_signals fs n_samples"; then one line per channel
// with at least filename, format, gain and channel-name fields. Unknown
// trailing fields are ignored; '#' lines are comments.
RecordHeader parse_header(const std::string& text);

// Format 212: two 12-bit two's-complement samples packed into 3 bytes.
// byte0 = low 8 bits of s0; byte1 low nibble = high 4 bits of s0,
// byte1 high nibble = high 4 bits of s1; byte2 = low 8 bits of s1.
std::pair<std::vector<int>, std::vector<int>> decode_format212(
    std::span<const std::uint8_t> bytes, std::size_t n_samples);

std::vector<std::uint8_t> encode_format212(std::span<const int> ch0,
                                           std::span<const int> ch1);

// rdann-style text export: the sample index is the integer field
// immediately preceding the single-character symbol field.
std::vector<Annotation> parse_annotations(const std::string& text);

// Reads <record>.hea plus its .dat and returns the requested channel in mV.
// channel = "auto" prefers MLII, then ECG1, then the first channel.
SignalRecord load_record(const std::filesystem::path& header_path,
                         const std::string& channel = "auto");

std::vector<Annotation> load_annotations(const std::filesystem::path& path,
                                         long n_samples = -1);

// Canonical record container "ECGREC1\0": fs as 8-byte float, sample count
// as 8-byte unsigned, then that many 4-byte floats (all little-endian).
// The record id is carried by the file name.
void write_ecgrec(const std::filesystem::path& path, const SignalRecord& rec);
SignalRecord read_ecgrec(const std::filesystem::path& path);

}  // namespace ecg
