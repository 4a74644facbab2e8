#include "ecg/record_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ecg/io_util.hpp"

namespace ecg {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

bool parse_long(const std::string& s, long& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

bool parse_double(const std::string& s, double& out) {
  try {
    std::size_t pos = 0;
    out = std::stod(s, &pos);
    return pos == s.size();
  } catch (...) {
    return false;
  }
}

// Format field may carry x/:/+ modifiers ("212x2"); take the leading int.
int parse_format(const std::string& tok) {
  long v = 0;
  const char* b = tok.data();
  auto [p, ec] = std::from_chars(b, b + tok.size(), v);
  if (ec != std::errc() || p == b)
    throw MalformedHeader("bad format field '" + tok + "'");
  return static_cast<int>(v);
}

// Gain field grammar: gain(baseline)/units, e.g. "200(1024)/mV".
void parse_gain(const std::string& tok, double& gain, bool& has_baseline,
                int& baseline) {
  std::string g = tok;
  has_baseline = false;
  auto slash = g.find('/');
  if (slash != std::string::npos) g = g.substr(0, slash);
  auto open = g.find('(');
  if (open != std::string::npos) {
    auto close = g.find(')', open);
    if (close == std::string::npos)
      throw MalformedHeader("bad gain field '" + tok + "'");
    long b = 0;
    if (!parse_long(g.substr(open + 1, close - open - 1), b))
      throw MalformedHeader("bad gain baseline in '" + tok + "'");
    baseline = static_cast<int>(b);
    has_baseline = true;
    g = g.substr(0, open);
  }
  if (!parse_double(g, gain) || gain <= 0.0)
    throw MalformedHeader("bad gain '" + tok + "'");
}

}  // namespace

RecordHeader parse_header(const std::string& text) {
  std::istringstream ss(text);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string trimmed = line;
    auto first = trimmed.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    if (trimmed[first] == '#') continue;
    lines.push_back(line);
  }
  if (lines.empty()) throw MalformedHeader("empty header");

  auto head = split_ws(lines[0]);
  if (head.size() < 4)
    throw MalformedHeader("record line needs 4 fields, got " +
                          std::to_string(head.size()));
  RecordHeader h;
  h.record_id = head[0];
  // Record name may carry a /segment suffix; keep the base name.
  auto slash = h.record_id.find('/');
  if (slash != std::string::npos) h.record_id = h.record_id.substr(0, slash);

  long nsig = 0;
  if (!parse_long(head[1], nsig) || nsig < 1)
    throw MalformedHeader("bad signal count '" + head[1] + "'");
  h.n_signals = static_cast<int>(nsig);
  if (!parse_double(head[2], h.fs) || h.fs <= 0.0)
    throw MalformedHeader("bad sampling frequency '" + head[2] + "'");
  long nsamp = 0;
  if (!parse_long(head[3], nsamp) || nsamp < 0)
    throw MalformedHeader("bad sample count '" + head[3] + "'");
  h.n_samples = nsamp;

  if (lines.size() < 1 + static_cast<std::size_t>(h.n_signals))
    throw MalformedHeader("expected " + std::to_string(h.n_signals) +
                          " channel lines");
  for (int i = 0; i < h.n_signals; ++i) {
    auto tok = split_ws(lines[1 + static_cast<std::size_t>(i)]);
    if (tok.size() < 4)
      throw MalformedHeader("channel line needs at least 4 fields");
    ChannelInfo ch;
    ch.file = tok[0];
    ch.format_code = parse_format(tok[1]);
    bool has_baseline = false;
    int baseline = 0;
    parse_gain(tok[2], ch.adc_gain, has_baseline, baseline);
    if (has_baseline) {
      ch.adc_zero = baseline;
    } else if (tok.size() >= 5) {
      long z = 0;
      if (parse_long(tok[4], z)) ch.adc_zero = static_cast<int>(z);
    }
    ch.name = tok.back();
    if (ch.format_code != 212)
      throw UnsupportedFormat("format " + std::to_string(ch.format_code) +
                              " (only 212 is supported)");
    h.channels.push_back(std::move(ch));
  }
  return h;
}

std::pair<std::vector<int>, std::vector<int>> decode_format212(
    std::span<const std::uint8_t> bytes, std::size_t n_samples) {
  const std::size_t need = n_samples * 3;
  if (bytes.size() < need)
    throw TruncatedFile("need " + std::to_string(need) + " bytes, have " +
                        std::to_string(bytes.size()));
  std::vector<int> s0(n_samples), s1(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const std::uint8_t b0 = bytes[3 * i];
    const std::uint8_t b1 = bytes[3 * i + 1];
    const std::uint8_t b2 = bytes[3 * i + 2];
    int v0 = ((b1 & 0x0F) << 8) | b0;
    int v1 = ((b1 & 0xF0) << 4) | b2;
    if (v0 > 2047) v0 -= 4096;
    if (v1 > 2047) v1 -= 4096;
    s0[i] = v0;
    s1[i] = v1;
  }
  return {std::move(s0), std::move(s1)};
}

std::vector<std::uint8_t> encode_format212(std::span<const int> ch0,
                                           std::span<const int> ch1) {
  if (ch0.size() != ch1.size())
    throw ValueOutOfRange("channel lengths differ");
  std::vector<std::uint8_t> out;
  out.reserve(ch0.size() * 3);
  for (std::size_t i = 0; i < ch0.size(); ++i) {
    int v0 = ch0[i];
    int v1 = ch1[i];
    if (v0 < -2048 || v0 > 2047 || v1 < -2048 || v1 > 2047)
      throw ValueOutOfRange("sample outside [-2048, 2047] at index " +
                            std::to_string(i));
    const unsigned u0 = static_cast<unsigned>(v0 & 0xFFF);
    const unsigned u1 = static_cast<unsigned>(v1 & 0xFFF);
    out.push_back(static_cast<std::uint8_t>(u0 & 0xFF));
    out.push_back(static_cast<std::uint8_t>(((u1 >> 8) << 4) | (u0 >> 8)));
    out.push_back(static_cast<std::uint8_t>(u1 & 0xFF));
  }
  return out;
}

std::vector<Annotation> parse_annotations(const std::string& text) {
  std::vector<Annotation> out;
  std::istringstream ss(text);
  std::string line;
  long line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    // Locate the single-character symbol and take the integer before it.
    bool found = false;
    Annotation ann;
    for (std::size_t i = 1; i < tok.size(); ++i) {
      if (tok[i].size() != 1) continue;
      if (std::isdigit(static_cast<unsigned char>(tok[i][0]))) continue;
      long idx = 0;
      if (!parse_long(tok[i - 1], idx) || idx < 0) continue;
      ann.sample_index = idx;
      ann.symbol = tok[i][0];
      found = true;
      break;
    }
    if (!found)
      throw MalformedAnnotationLine("line " + std::to_string(line_no) + ": '" +
                                    line + "'");
    if (!out.empty() && ann.sample_index < out.back().sample_index)
      throw UnsortedAnnotations("index " + std::to_string(ann.sample_index) +
                                " after " +
                                std::to_string(out.back().sample_index));
    out.push_back(ann);
  }
  return out;
}

SignalRecord load_record(const std::filesystem::path& header_path,
                         const std::string& channel) {
  std::ifstream hf(header_path);
  if (!hf) throw DataError("cannot open header " + header_path.string());
  std::stringstream buf;
  buf << hf.rdbuf();
  RecordHeader header = parse_header(buf.str());
  if (header.channels.size() != 2)
    throw UnsupportedFormat("only two-channel format-212 records supported");

  std::size_t pick = 0;
  if (channel == "auto") {
    auto find = [&](const std::string& name) -> long {
      for (std::size_t i = 0; i < header.channels.size(); ++i)
        if (header.channels[i].name == name) return static_cast<long>(i);
      return -1;
    };
    long i = find("MLII");
    if (i < 0) i = find("ECG1");
    pick = i < 0 ? 0 : static_cast<std::size_t>(i);
  } else {
    bool ok = false;
    for (std::size_t i = 0; i < header.channels.size(); ++i) {
      if (header.channels[i].name == channel) {
        pick = i;
        ok = true;
        break;
      }
    }
    if (!ok)
      throw DataError("channel '" + channel + "' not in record " +
                      header.record_id);
  }

  auto dat_path = header_path.parent_path() / header.channels[pick].file;
  std::ifstream df(dat_path, std::ios::binary);
  if (!df) throw DataError("cannot open signal file " + dat_path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(df)),
                                  std::istreambuf_iterator<char>());
  auto [c0, c1] =
      decode_format212(bytes, static_cast<std::size_t>(header.n_samples));
  const std::vector<int>& raw = pick == 0 ? c0 : c1;
  const ChannelInfo& ch = header.channels[pick];

  SignalRecord rec;
  rec.record_id = header.record_id;
  rec.channel_name = ch.name;
  rec.fs = header.fs;
  rec.samples.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    rec.samples[i] = (raw[i] - ch.adc_zero) / ch.adc_gain;
  return rec;
}

std::vector<Annotation> load_annotations(const std::filesystem::path& path,
                                         long n_samples) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open annotation file " + path.string());
  std::stringstream buf;
  buf << f.rdbuf();
  auto anns = parse_annotations(buf.str());
  if (n_samples >= 0) {
    for (const auto& a : anns)
      if (a.sample_index >= n_samples)
        throw MalformedAnnotationLine(
            "annotation index " + std::to_string(a.sample_index) +
            " beyond record length " + std::to_string(n_samples));
  }
  return anns;
}

static const char kRecMagic[8] = {'E', 'C', 'G', 'R', 'E', 'C', '1', '\0'};

void write_ecgrec(const std::filesystem::path& path, const SignalRecord& rec) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  io::write_magic(f, kRecMagic);
  io::write_le<double>(f, rec.fs);
  io::write_le<std::uint64_t>(f, rec.samples.size());
  for (double v : rec.samples) io::write_le<float>(f, static_cast<float>(v));
}

SignalRecord read_ecgrec(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  io::expect_magic(f, kRecMagic, path.string());
  SignalRecord rec;
  rec.record_id = path.stem().string();
  rec.fs = io::read_le<double>(f);
  const auto n = io::read_le<std::uint64_t>(f);
  rec.samples.resize(n);
  for (std::uint64_t i = 0; i < n; ++i)
    rec.samples[i] = io::read_le<float>(f);
  return rec;
}

}  // namespace ecg
