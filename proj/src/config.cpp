#include "ecg/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace ecg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw InvalidValue(key + " = '" + v + "'");
    return x;
  } catch (const Error&) {
    throw;
  } catch (...) {
    throw InvalidValue(key + " = '" + v + "'");
  }
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  const double x = parse_number(key, v);
  if (x < 0 || x != static_cast<double>(static_cast<std::size_t>(x)))
    throw InvalidValue(key + " must be a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

std::vector<std::size_t> parse_size_list(const std::string& key,
                                         const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trim(item)));
  if (out.empty()) throw InvalidValue(key + " list is empty");
  return out;
}

void apply(RunConfig& c, const std::string& key, const std::string& v) {
  auto& m = c.model;
  auto& t = c.train;
  auto& p = c.preprocess;
  if (key == "input_length") m.input_length = parse_size(key, v);
  else if (key == "filter_size") m.filter_size = parse_size(key, v);
  else if (key == "initial_filters") m.initial_filters = parse_size(key, v);
  else if (key == "growth_rate") m.growth_rate = parse_size(key, v);
  else if (key == "convs_per_block") m.convs_per_block = parse_size(key, v);
  else if (key == "n_blocks") m.n_blocks = parse_size(key, v);
  else if (key == "compression") m.compression = parse_number(key, v);
  else if (key == "pool_size") m.pool_size = parse_size(key, v);
  else if (key == "transition_strides") m.transition_strides = parse_size_list(key, v);
  else if (key == "gru_units") m.gru_units = parse_size(key, v);
  else if (key == "gru_seq_len") m.gru_seq_len = parse_size(key, v);
  else if (key == "dropout") {
    const double x = parse_number(key, v);
    if (!(x >= 0.0 && x < 1.0)) throw InvalidValue("dropout = " + v);
    m.dropout = x;
    t.dropout = x;
  } else if (key == "n_classes") m.n_classes = parse_size(key, v);
  else if (key == "architecture") {
    if (v == "branched") m.architecture = nn::ModelSpec::Arch::branched;
    else if (v == "stacked") m.architecture = nn::ModelSpec::Arch::stacked;
    else throw InvalidValue("architecture = '" + v + "'");
  } else if (key == "max_epochs") t.max_epochs = parse_size(key, v);
  else if (key == "batch_size") t.batch_size = parse_size(key, v);
  else if (key == "patience") t.patience = parse_size(key, v);
  else if (key == "lr") {
    const double x = parse_number(key, v);
    if (!(x > 0.0)) throw InvalidValue("lr = " + v);
    t.lr = x;
  } else if (key == "seed") t.seed = parse_size(key, v);
  else if (key == "validation_fraction") {
    const double x = parse_number(key, v);
    if (!(x > 0.0 && x < 0.5)) throw InvalidValue("validation_fraction = " + v);
    t.validation_fraction = x;
  } else if (key == "precision") {
    const auto x = parse_size(key, v);
    if (x != 32 && x != 64) throw InvalidValue("precision = " + v);
    t.precision = static_cast<int>(x);
  } else if (key == "baseline_window_short") p.baseline_window_short = parse_number(key, v);
  else if (key == "baseline_window_long") p.baseline_window_long = parse_number(key, v);
  else if (key == "smoothing_window") p.smoothing_window = static_cast<int>(parse_size(key, v));
  else if (key == "target_fs") p.target_fs = parse_number(key, v);
  else throw UnknownField(key);
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream ss(text);
  std::string line;
  long line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidValue("line " + std::to_string(line_no) +
                         " is not 'key = value': '" + line + "'");
    apply(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.preprocess.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config " + path.string());
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  const auto& m = cfg.model;
  const auto& t = cfg.train;
  const auto& p = cfg.preprocess;
  os << "input_length = " << m.input_length << '\n';
  os << "filter_size = " << m.filter_size << '\n';
  os << "initial_filters = " << m.initial_filters << '\n';
  os << "growth_rate = " << m.growth_rate << '\n';
  os << "convs_per_block = " << m.convs_per_block << '\n';
  os << "n_blocks = " << m.n_blocks << '\n';
  os << "compression = " << m.compression << '\n';
  os << "pool_size = " << m.pool_size << '\n';
  os << "transition_strides = ";
  for (std::size_t i = 0; i < m.transition_strides.size(); ++i)
    os << (i ? "," : "") << m.transition_strides[i];
  os << '\n';
  os << "gru_units = " << m.gru_units << '\n';
  os << "gru_seq_len = " << m.gru_seq_len << '\n';
  os << "dropout = " << m.dropout << '\n';
  os << "n_classes = " << m.n_classes << '\n';
  os << "architecture = "
     << (m.architecture == nn::ModelSpec::Arch::branched ? "branched"
                                                         : "stacked")
     << '\n';
  os << "max_epochs = " << t.max_epochs << '\n';
  os << "batch_size = " << t.batch_size << '\n';
  os << "patience = " << t.patience << '\n';
  os << "lr = " << t.lr << '\n';
  os << "seed = " << t.seed << '\n';
  os << "validation_fraction = " << t.validation_fraction << '\n';
  os << "precision = " << t.precision << '\n';
  os << "baseline_window_short = " << p.baseline_window_short << '\n';
  os << "baseline_window_long = " << p.baseline_window_long << '\n';
  os << "smoothing_window = " << p.smoothing_window << '\n';
  os << "target_fs = " << p.target_fs << '\n';
  return os.str();
}

}  // namespace ecg
