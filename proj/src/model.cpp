#include "ecg/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "ecg/io_util.hpp"
#include "ecg/random.hpp"

namespace ecg::nn {

ModelSpec ModelSpec::toy() {
  ModelSpec s;
  s.input_length = 64;
  s.filter_size = 8;
  s.initial_filters = 6;
  s.growth_rate = 4;
  s.convs_per_block = 2;
  s.n_blocks = 1;
  s.compression = 0.8;
  s.pool_size = 4;
  s.transition_strides = {4};
  s.gru_units = 8;
  s.gru_seq_len = 16;
  s.dropout = 0.25;
  s.n_classes = 5;
  return s;
}

std::size_t compressed_channels(std::size_t channels, double compression) {
  return static_cast<std::size_t>(
      std::floor(compression * static_cast<double>(channels) + 0.5));
}

ModelSpec::Arithmetic ModelSpec::arithmetic() const {
  Arithmetic a;
  a.lengths.push_back(input_length);
  a.channels.push_back(initial_filters);
  std::size_t len = input_length;
  std::size_t ch = initial_filters;
  for (std::size_t i = 0; i < n_blocks; ++i) {
    ch += convs_per_block * growth_rate;
    a.channels.push_back(ch);
    ch = compressed_channels(ch, compression);
    a.channels.push_back(ch);
    const std::size_t stride = transition_strides[i];
    if (stride > 1) {
      if (pool_size > len)
        throw InvalidSpec("pool size " + std::to_string(pool_size) +
                          " exceeds length " + std::to_string(len) +
                          " at transition " + std::to_string(i));
      len = (len - pool_size) / stride + 1;
    }
    a.lengths.push_back(len);
  }
  return a;
}

void ModelSpec::validate() const {
  if (n_classes < 2) throw InvalidSpec("n_classes must be >= 2");
  if (filter_size < 1 || initial_filters < 1 || growth_rate < 1 ||
      convs_per_block < 1 || n_blocks < 1 || gru_units < 1)
    throw InvalidSpec("all size fields must be >= 1");
  if (!(compression > 0.0 && compression <= 1.0))
    throw InvalidSpec("compression must be in (0, 1]");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw InvalidSpec("dropout must be in [0, 1)");
  if (transition_strides.size() != n_blocks)
    throw InvalidSpec("need one transition stride per block, got " +
                      std::to_string(transition_strides.size()));
  const auto a = arithmetic();
  if (a.lengths.back() != gru_seq_len)
    throw InvalidSpec("pooling arithmetic reaches length " +
                      std::to_string(a.lengths.back()) + ", expected " +
                      std::to_string(gru_seq_len));
}

namespace {

class Builder {
public:
  Builder(BuiltModel& m, std::uint64_t seed) : m_(m), rng_(seed) {}

  std::size_t tensor(const std::string& name, Shape shape, double limit) {
    auto t = Tensor::create(std::move(shape), true);
    if (limit > 0.0)
      for (double& v : t->value) v = rng_.uniform(-limit, limit);
    quantize(t->value);
    m_.params.emplace_back(name, std::move(t));
    return m_.params.size() - 1;
  }

  std::size_t constant(const std::string& name, Shape shape, double fill) {
    auto t = Tensor::create(std::move(shape), true);
    std::fill(t->value.begin(), t->value.end(), fill);
    m_.params.emplace_back(name, std::move(t));
    return m_.params.size() - 1;
  }

  BuiltModel::ConvRef conv(const std::string& prefix, std::size_t k,
                           std::size_t ci, std::size_t co) {
    const double limit = std::sqrt(1.0 / static_cast<double>(k * ci));
    BuiltModel::ConvRef r;
    r.kernel = tensor(prefix + ".kernel", {k, ci, co}, limit);
    r.bias = constant(prefix + ".bias", {co}, 0.0);
    return r;
  }

  BuiltModel::BnRef bn(const std::string& prefix, std::size_t c) {
    BuiltModel::BnRef r;
    r.gamma = constant(prefix + ".gamma", {c}, 1.0);
    r.beta = constant(prefix + ".beta", {c}, 0.0);
    BatchNormState st;
    st.running_mean.assign(c, 0.0);
    st.running_var.assign(c, 1.0);
    m_.bn_states.emplace_back(prefix, std::move(st));
    r.state = m_.bn_states.size() - 1;
    return r;
  }

  BuiltModel::HeadRef head(const std::string& prefix, std::size_t d,
                           std::size_t o) {
    const double limit = std::sqrt(1.0 / static_cast<double>(d));
    BuiltModel::HeadRef r;
    r.w = tensor(prefix + ".w", {d, o}, limit);
    r.b = constant(prefix + ".b", {o}, 0.0);
    return r;
  }

private:
  BuiltModel& m_;
  RandomEngine rng_;
};

BuiltModel build_impl(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  BuiltModel m;
  m.spec = spec;
  Builder b(m, seed);

  m.init_conv = b.conv("trunk.conv0", spec.filter_size, 1, spec.initial_filters);
  m.init_bn = b.bn("trunk.bn0", spec.initial_filters);

  std::size_t ch = spec.initial_filters;
  for (std::size_t i = 0; i < spec.n_blocks; ++i) {
    BuiltModel::BlockRef block;
    std::size_t in_ch = ch;
    for (std::size_t j = 0; j < spec.convs_per_block; ++j) {
      const std::string prefix =
          "trunk.block" + std::to_string(i) + ".conv" + std::to_string(j);
      block.convs.push_back(
          b.conv(prefix, spec.filter_size, in_ch, spec.growth_rate));
      block.bns.push_back(b.bn("trunk.block" + std::to_string(i) + ".bn" +
                                   std::to_string(j),
                               spec.growth_rate));
      in_ch += spec.growth_rate;
    }
    m.blocks.push_back(std::move(block));
    ch = in_ch;

    BuiltModel::TransRef trans;
    const std::size_t out_ch = compressed_channels(ch, spec.compression);
    trans.conv = b.conv("trunk.trans" + std::to_string(i) + ".conv", 1, ch,
                        out_ch);
    trans.bn = b.bn("trunk.trans" + std::to_string(i) + ".bn", out_ch);
    trans.stride = spec.transition_strides[i];
    m.transitions.push_back(std::move(trans));
    ch = out_ch;
  }

  const double wlimit = std::sqrt(1.0 / static_cast<double>(ch));
  const double ulimit = std::sqrt(1.0 / static_cast<double>(spec.gru_units));
  const std::size_t u = spec.gru_units;
  m.gru.wz = b.tensor("gru.wz", {ch, u}, wlimit);
  m.gru.uz = b.tensor("gru.uz", {u, u}, ulimit);
  m.gru.bz = b.constant("gru.bz", {u}, 0.0);
  m.gru.wr = b.tensor("gru.wr", {ch, u}, wlimit);
  m.gru.ur = b.tensor("gru.ur", {u, u}, ulimit);
  m.gru.br = b.constant("gru.br", {u}, 0.0);
  m.gru.wh = b.tensor("gru.wh", {ch, u}, wlimit);
  m.gru.uh = b.tensor("gru.uh", {u, u}, ulimit);
  m.gru.bh = b.constant("gru.bh", {u}, 0.0);

  m.attn_w = b.tensor("attn.w", {u}, ulimit);
  m.attn_b = b.constant("attn.b", {1}, 0.0);

  m.head_gru = b.head("head_gru", u, spec.n_classes);
  if (spec.architecture == ModelSpec::Arch::branched)
    m.head_avg = b.head("head_avg", ch, spec.n_classes);
  return m;
}

}  // namespace

BuiltModel build_branched_model(const ModelSpec& spec, std::uint64_t seed) {
  ModelSpec s = spec;
  s.architecture = ModelSpec::Arch::branched;
  return build_impl(s, seed);
}

BuiltModel build_stacked_model(const ModelSpec& spec, std::uint64_t seed) {
  ModelSpec s = spec;
  s.architecture = ModelSpec::Arch::stacked;
  return build_impl(s, seed);
}

BuiltModel build_model(const ModelSpec& spec, std::uint64_t seed) {
  return build_impl(spec, seed);
}

Parameter* BuiltModel::find_param(const std::string& name) {
  for (auto& p : params)
    if (p.name == name) return &p;
  return nullptr;
}

const Parameter* BuiltModel::find_param(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return &p;
  return nullptr;
}

void BuiltModel::set_requires_grad(bool on) {
  for (auto& p : params) p.tensor->requires_grad = on;
}

std::vector<std::string> BuiltModel::parameter_names() const {
  std::vector<std::string> names;
  names.reserve(params.size());
  for (const auto& p : params) names.push_back(p.name);
  return names;
}

BuiltModel::Snapshot BuiltModel::snapshot() const {
  Snapshot s;
  s.values.reserve(params.size());
  for (const auto& p : params) s.values.push_back(p.tensor->value);
  s.bn_states = bn_states;
  return s;
}

void BuiltModel::restore(const Snapshot& s) {
  if (s.values.size() != params.size())
    throw ShapeMismatch("snapshot parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    params[i].tensor->value = s.values[i];
  bn_states = s.bn_states;
}

TensorPtr dense_block_forward(BuiltModel& m, std::size_t block_index,
                              const TensorPtr& input, Mode mode) {
  auto& block = m.blocks.at(block_index);
  TensorPtr x = input;
  for (std::size_t j = 0; j < block.convs.size(); ++j) {
    auto y = conv1d(x, m.p(block.convs[j].kernel), m.p(block.convs[j].bias));
    y = batch_norm1d(y, m.p(block.bns[j].gamma), m.p(block.bns[j].beta), mode,
                     m.bn_states[block.bns[j].state].second);
    y = relu(y);
    x = concat_channels(x, y);
  }
  return x;
}

TensorPtr transition_forward(BuiltModel& m, std::size_t trans_index,
                             const TensorPtr& input, Mode mode) {
  auto& t = m.transitions.at(trans_index);
  auto x = conv1d(input, m.p(t.conv.kernel), m.p(t.conv.bias));
  x = batch_norm1d(x, m.p(t.bn.gamma), m.p(t.bn.beta), mode,
                   m.bn_states[t.bn.state].second);
  x = relu(x);
  if (t.stride > 1) x = avg_pool1d(x, m.spec.pool_size, t.stride);
  return x;
}

TensorPtr trunk_forward(BuiltModel& m, const TensorPtr& batch, Mode mode,
                        std::uint64_t seed) {
  if (batch->shape.size() != 3 || batch->shape[1] != m.spec.input_length ||
      batch->shape[2] != 1)
    throw ShapeMismatch("model input " + shape_str(batch->shape) +
                        ", expected [b," + std::to_string(m.spec.input_length) +
                        ",1]");
  auto x = conv1d(batch, m.p(m.init_conv.kernel), m.p(m.init_conv.bias));
  x = batch_norm1d(x, m.p(m.init_bn.gamma), m.p(m.init_bn.beta), mode,
                   m.bn_states[m.init_bn.state].second);
  x = relu(x);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    x = dense_block_forward(m, i, x, mode);
    x = transition_forward(m, i, x, mode);
    x = dropout(x, m.spec.dropout, mode, mix_seed(seed, i));
  }
  return x;
}

BranchResult branch_forward(BuiltModel& m, const TensorPtr& trunk, Mode mode,
                            std::uint64_t seed) {
  BranchResult r;
  const std::size_t b = trunk->shape[0];

  auto h0 = Tensor::zeros({b, m.spec.gru_units});
  GruWeights w{m.p(m.gru.wz), m.p(m.gru.uz), m.p(m.gru.bz),
               m.p(m.gru.wr), m.p(m.gru.ur), m.p(m.gru.br),
               m.p(m.gru.wh), m.p(m.gru.uh), m.p(m.gru.bh)};
  r.gru_states = gru_forward(trunk, w, h0);
  auto pooled =
      attention_pool(r.gru_states, m.p(m.attn_w), m.p(m.attn_b), &r.attention);
  pooled = dropout(pooled, m.spec.dropout, mode, mix_seed(seed, 100));
  r.logits_gru = dense(pooled, m.p(m.head_gru.w), m.p(m.head_gru.b));
  r.probs_gru = softmax(r.logits_gru);

  if (m.spec.architecture == ModelSpec::Arch::branched) {
    auto avg = mean_over_time(trunk);
    r.logits_avg = dense(avg, m.p(m.head_avg.w), m.p(m.head_avg.b));
    r.probs_avg = softmax(r.logits_avg);
    r.probs = scale(add(r.probs_gru, r.probs_avg), 0.5);
  } else {
    r.probs = r.probs_gru;
  }
  return r;
}

TensorPtr model_forward(BuiltModel& m, const TensorPtr& batch, Mode mode,
                        std::uint64_t seed, ForwardTaps* taps) {
  auto trunk = trunk_forward(m, batch, mode, seed);
  auto r = branch_forward(m, trunk, mode, seed);
  if (taps) {
    taps->trunk = trunk;
    taps->gru_states = r.gru_states;
    taps->attention = r.attention;
  }
  return r.probs;
}

std::pair<TensorPtr, TensorPtr> model_loss(BuiltModel& m,
                                           const TensorPtr& batch,
                                           const std::vector<double>& targets,
                                           Mode mode, std::uint64_t seed) {
  auto trunk = trunk_forward(m, batch, mode, seed);
  auto r = branch_forward(m, trunk, mode, seed);
  if (m.spec.architecture == ModelSpec::Arch::branched) {
    auto loss = nll_from_probs(r.probs, targets);
    return {r.probs, loss};
  }
  return softmax_cross_entropy(r.logits_gru, targets);
}

namespace {

constexpr char kWtsMagic[8] = {'E', 'C', 'G', 'W', 'T', 'S', '1', '\0'};

struct Entry {
  Shape shape;
  std::vector<double> values;
};

void write_entry(std::ostream& os, const std::string& name, const Shape& shape,
                 std::span<const double> values) {
  io::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
  io::write_bytes(os, name.data(), name.size());
  io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(shape.size()));
  for (std::size_t d : shape) io::write_le<std::uint64_t>(os, d);
  for (double v : values) io::write_le<double>(os, v);
}

std::map<std::string, Entry> read_entries(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingCheckpoint(path.string());
  io::expect_magic(f, kWtsMagic, path.string());
  const auto count = io::read_le<std::uint32_t>(f);
  std::map<std::string, Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = io::read_le<std::uint16_t>(f);
    std::string name(name_len, '\0');
    io::read_bytes(f, name.data(), name_len);
    Entry e;
    const auto rank = io::read_le<std::uint8_t>(f);
    std::size_t n = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      e.shape.push_back(static_cast<std::size_t>(io::read_le<std::uint64_t>(f)));
      n *= e.shape.back();
    }
    e.values.resize(n);
    for (std::size_t j = 0; j < n; ++j) e.values[j] = io::read_le<double>(f);
    entries.emplace(std::move(name), std::move(e));
  }
  return entries;
}

std::vector<std::pair<std::string, Entry>> meta_entries(const ModelSpec& s) {
  auto scalar = [](double v) {
    Entry e;
    e.shape = {1};
    e.values = {v};
    return e;
  };
  std::vector<std::pair<std::string, Entry>> out;
  out.emplace_back("meta.input_length", scalar(static_cast<double>(s.input_length)));
  out.emplace_back("meta.filter_size", scalar(static_cast<double>(s.filter_size)));
  out.emplace_back("meta.initial_filters",
                   scalar(static_cast<double>(s.initial_filters)));
  out.emplace_back("meta.growth_rate", scalar(static_cast<double>(s.growth_rate)));
  out.emplace_back("meta.convs_per_block",
                   scalar(static_cast<double>(s.convs_per_block)));
  out.emplace_back("meta.n_blocks", scalar(static_cast<double>(s.n_blocks)));
  out.emplace_back("meta.compression", scalar(s.compression));
  out.emplace_back("meta.pool_size", scalar(static_cast<double>(s.pool_size)));
  Entry strides;
  strides.shape = {s.transition_strides.size()};
  for (std::size_t v : s.transition_strides)
    strides.values.push_back(static_cast<double>(v));
  out.emplace_back("meta.transition_strides", std::move(strides));
  out.emplace_back("meta.gru_units", scalar(static_cast<double>(s.gru_units)));
  out.emplace_back("meta.gru_seq_len", scalar(static_cast<double>(s.gru_seq_len)));
  out.emplace_back("meta.dropout", scalar(s.dropout));
  out.emplace_back("meta.n_classes", scalar(static_cast<double>(s.n_classes)));
  out.emplace_back("meta.architecture",
                   scalar(s.architecture == ModelSpec::Arch::branched ? 0.0 : 1.0));
  return out;
}

ModelSpec spec_from_entries(const std::map<std::string, Entry>& entries) {
  auto get = [&](const std::string& name) -> const Entry& {
    auto it = entries.find(name);
    if (it == entries.end())
      throw DataError("checkpoint missing " + name + " entry");
    return it->second;
  };
  auto num = [&](const std::string& name) { return get(name).values.at(0); };
  ModelSpec s;
  s.input_length = static_cast<std::size_t>(num("meta.input_length"));
  s.filter_size = static_cast<std::size_t>(num("meta.filter_size"));
  s.initial_filters = static_cast<std::size_t>(num("meta.initial_filters"));
  s.growth_rate = static_cast<std::size_t>(num("meta.growth_rate"));
  s.convs_per_block = static_cast<std::size_t>(num("meta.convs_per_block"));
  s.n_blocks = static_cast<std::size_t>(num("meta.n_blocks"));
  s.compression = num("meta.compression");
  s.pool_size = static_cast<std::size_t>(num("meta.pool_size"));
  s.transition_strides.clear();
  for (double v : get("meta.transition_strides").values)
    s.transition_strides.push_back(static_cast<std::size_t>(v));
  s.gru_units = static_cast<std::size_t>(num("meta.gru_units"));
  s.gru_seq_len = static_cast<std::size_t>(num("meta.gru_seq_len"));
  s.dropout = num("meta.dropout");
  s.n_classes = static_cast<std::size_t>(num("meta.n_classes"));
  s.architecture = num("meta.architecture") == 0.0 ? ModelSpec::Arch::branched
                                                   : ModelSpec::Arch::stacked;
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const BuiltModel& m,
                     bool include_adam) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  io::write_magic(f, kWtsMagic);

  std::uint32_t count = static_cast<std::uint32_t>(m.params.size()) +
                        2 * static_cast<std::uint32_t>(m.bn_states.size()) + 14;
  if (include_adam) count += 3 * static_cast<std::uint32_t>(m.params.size());
  io::write_le<std::uint32_t>(f, count);

  for (const auto& [name, e] : meta_entries(m.spec))
    write_entry(f, name, e.shape, e.values);
  for (const auto& p : m.params)
    write_entry(f, p.name, p.tensor->shape, p.tensor->value);
  for (const auto& [name, st] : m.bn_states) {
    write_entry(f, name + ".running_mean", {st.running_mean.size()},
                st.running_mean);
    write_entry(f, name + ".running_var", {st.running_var.size()},
                st.running_var);
  }
  if (include_adam) {
    for (const auto& p : m.params) {
      write_entry(f, p.name + "#adam_m", p.tensor->shape, p.adam_m);
      write_entry(f, p.name + "#adam_v", p.tensor->shape, p.adam_v);
      const double t = static_cast<double>(p.step_count);
      write_entry(f, p.name + "#adam_t", {1}, std::span<const double>(&t, 1));
    }
  }
}

void load_checkpoint(const std::filesystem::path& path, BuiltModel& m,
                     bool allow_partial) {
  auto entries = read_entries(path);
  for (auto& p : m.params) {
    auto it = entries.find(p.name);
    if (it == entries.end()) {
      if (allow_partial) continue;
      throw DataError("checkpoint " + path.string() + " missing parameter " +
                      p.name);
    }
    if (it->second.shape != p.tensor->shape)
      throw ShapeMismatch("checkpoint " + p.name + " shape " +
                          shape_str(it->second.shape) + " vs model " +
                          shape_str(p.tensor->shape));
    p.tensor->value = it->second.values;

    auto am = entries.find(p.name + "#adam_m");
    auto av = entries.find(p.name + "#adam_v");
    auto at = entries.find(p.name + "#adam_t");
    if (am != entries.end() && av != entries.end() && at != entries.end()) {
      p.adam_m = am->second.values;
      p.adam_v = av->second.values;
      p.step_count = static_cast<long>(at->second.values.at(0));
    }
  }
  for (auto& [name, st] : m.bn_states) {
    auto rm = entries.find(name + ".running_mean");
    auto rv = entries.find(name + ".running_var");
    if (rm == entries.end() || rv == entries.end()) {
      if (allow_partial) continue;
      throw DataError("checkpoint missing batch-norm state " + name);
    }
    st.running_mean = rm->second.values;
    st.running_var = rv->second.values;
    st.initialized = true;
  }
}

BuiltModel load_model(const std::filesystem::path& path) {
  auto entries = read_entries(path);
  ModelSpec spec = spec_from_entries(entries);
  BuiltModel m = build_model(spec, 0);
  load_checkpoint(path, m, false);
  return m;
}

}  // namespace ecg::nn
