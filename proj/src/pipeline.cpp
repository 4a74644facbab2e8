#include "ecg/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ecg/dsp.hpp"
#include "ecg/introspection.hpp"
#include "ecg/io_util.hpp"
#include "ecg/random.hpp"

namespace ecg {

namespace fs = std::filesystem;

const std::vector<std::string>& SplitLists::for_split(
    const std::string& name) const {
  auto it = lists.find(name);
  if (it == lists.end())
    throw InvalidValue("unknown split '" + name + "'");
  return it->second;
}

SplitLists parse_split_lists(const std::string& text) {
  SplitLists out;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string name;
    if (!(ls >> name)) continue;
    if (!name.empty() && name.back() == ':') name.pop_back();
    std::vector<std::string> ids;
    std::string id;
    while (ls >> id) ids.push_back(id);
    out.lists[name] = std::move(ids);
  }
  return out;
}

namespace {

// svdb records present on disk, identified by their .hea files.
std::vector<std::string> scan_record_ids(const std::vector<fs::path>& dirs) {
  std::vector<std::string> ids;
  for (const auto& dir : dirs) {
    if (!fs::exists(dir)) continue;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.path().extension() == ".hea")
        ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

bool is_mitdb_id(const std::string& id) {
  return id.size() == 3 && id[0] >= '1' && id[0] <= '2';
}

fs::path find_in_dirs(const std::vector<fs::path>& dirs,
                      const std::string& filename) {
  for (const auto& dir : dirs) {
    fs::path p = dir / filename;
    if (fs::exists(p)) return p;
  }
  return {};
}

void ensure_dir(const fs::path& p) { fs::create_directories(p); }

}  // namespace

SplitLists resolve_split_lists(const std::vector<fs::path>& data_dirs,
                               const fs::path& override_file) {
  SplitLists out;
  out.lists["DS1"] = ds1_records();
  out.lists["DST1"] = dst1_records();

  std::vector<std::string> svdb_ids;
  for (const auto& id : scan_record_ids(data_dirs))
    if (!is_mitdb_id(id)) svdb_ids.push_back(id);
  auto [ds2, dst2] = svdb_split(std::move(svdb_ids));
  out.lists["DS2"] = std::move(ds2);
  out.lists["DST2"] = std::move(dst2);

  if (!override_file.empty()) {
    std::ifstream f(override_file);
    if (!f) throw DataError("cannot open splits file " + override_file.string());
    std::stringstream buf;
    buf << f.rdbuf();
    for (auto& [name, ids] : parse_split_lists(buf.str()).lists)
      out.lists[name] = std::move(ids);
  }
  return out;
}

void write_manifest(const PipelinePaths& paths, const std::string& stage,
                    const std::string& config_text, std::uint64_t seed,
                    const std::vector<fs::path>& inputs) {
  ensure_dir(paths.out_dir / "manifests");
  std::ofstream f(paths.out_dir / "manifests" / (stage + ".manifest"));
  if (!f) return;
  f << "stage " << stage << '\n';
  f << "seed " << seed << '\n';
  f << "config_fnv1a64 " << std::hex << io::fnv1a64(config_text) << std::dec
    << '\n';
  for (const auto& in : inputs) {
    std::ifstream inf(in, std::ios::binary);
    if (!inf) continue;
    std::stringstream buf;
    buf << inf.rdbuf();
    f << "input " << in.string() << " fnv1a64 " << std::hex
      << io::fnv1a64(buf.str()) << std::dec << '\n';
  }
}

void run_ingest(const PipelinePaths& paths,
                const std::vector<std::string>& records,
                const std::string& channel) {
  ensure_dir(paths.raw_dir());
  std::vector<std::string> ids =
      records.empty() ? scan_record_ids(paths.data_dirs) : records;
  std::vector<fs::path> inputs;
  for (const auto& id : ids) {
    fs::path hea = find_in_dirs(paths.data_dirs, id + ".hea");
    if (hea.empty()) throw MissingRecord(id + ".hea not found in data dirs");
    auto rec = load_record(hea, channel);
    write_ecgrec(paths.raw_dir() / (id + ".ecgrec"), rec);
    inputs.push_back(hea);
  }
  write_manifest(paths, "ingest", channel, 0, inputs);
}

void run_preprocess(const PipelinePaths& paths, const PreprocessConfig& cfg,
                    const std::vector<std::string>& records) {
  cfg.validate();
  ensure_dir(paths.pre_dir());
  std::vector<std::string> ids = records;
  if (ids.empty()) {
    for (const auto& entry : fs::directory_iterator(paths.raw_dir()))
      if (entry.path().extension() == ".ecgrec")
        ids.push_back(entry.path().stem().string());
    std::sort(ids.begin(), ids.end());
  }
  std::vector<fs::path> inputs;
  for (const auto& id : ids) {
    fs::path in = paths.raw_dir() / (id + ".ecgrec");
    auto rec = read_ecgrec(in);
    auto out = preprocess_record(rec, cfg);
    write_ecgrec(paths.pre_dir() / (id + ".ecgrec"), out);
    inputs.push_back(in);
  }
  std::ostringstream cfg_text;
  cfg_text << cfg.baseline_window_short << ' ' << cfg.baseline_window_long
           << ' ' << cfg.smoothing_window << ' ' << cfg.target_fs;
  write_manifest(paths, "preprocess", cfg_text.str(), 0, inputs);
}

namespace {

fs::path annotation_path(const PipelinePaths& paths, const std::string& id) {
  fs::path p = find_in_dirs(paths.data_dirs, id + ".ann");
  if (p.empty()) p = find_in_dirs(paths.data_dirs, id + ".txt");
  return p;
}

void ensure_record_prepared(const PipelinePaths& paths, const std::string& id,
                            const PreprocessConfig& cfg) {
  const fs::path raw = paths.raw_dir() / (id + ".ecgrec");
  if (!fs::exists(raw)) run_ingest(paths, {id});
  const fs::path pre = paths.pre_dir() / (id + ".ecgrec");
  if (!fs::exists(pre)) run_preprocess(paths, cfg, {id});
}

SplitRole role_for_split(const std::string& name) {
  return name.rfind("DST", 0) == 0 ? SplitRole::test : SplitRole::train;
}

void write_stats_sidecar(const fs::path& store_path, const SegmentSet& set) {
  std::ofstream f(store_path.string() + ".stats");
  f.precision(17);
  f << "mean " << set.norm_mean << "\nstd " << set.norm_std << '\n';
  f << "records";
  for (const auto& id : set.record_ids) f << ' ' << id;
  f << '\n';
  const auto counts = set.class_counts();
  f << "counts";
  for (long c : counts) f << ' ' << c;
  f << '\n';
}

}  // namespace

std::filesystem::path run_segment(const PipelinePaths& paths,
                                  const std::string& split,
                                  const SplitLists& splits,
                                  const PreprocessConfig& cfg) {
  ensure_dir(paths.seg_dir());
  const auto& ids = splits.for_split(split);
  if (ids.empty()) throw MissingRecord("split " + split + " has no records");

  std::vector<fs::path> inputs;
  for (const auto& id : ids) {
    ensure_record_prepared(paths, id, cfg);
    inputs.push_back(paths.pre_dir() / (id + ".ecgrec"));
  }

  RecordStore store;
  store.load_preprocessed = [&](const std::string& id) {
    return read_ecgrec(paths.pre_dir() / (id + ".ecgrec"));
  };
  store.load_annotations = [&](const std::string& id) {
    fs::path ann = annotation_path(paths, id);
    if (ann.empty()) throw DataError("no annotation file for record " + id);
    const auto raw = read_ecgrec(paths.raw_dir() / (id + ".ecgrec"));
    return load_annotations(ann, static_cast<long>(raw.samples.size()));
  };
  store.original_fs = [&](const std::string& id) {
    return read_ecgrec(paths.raw_dir() / (id + ".ecgrec")).fs;
  };

  auto set = build_dataset(split, ids, store);
  set.role = role_for_split(split);
  const fs::path out = paths.seg_dir() / (split + ".ecgseg");
  write_segment_store(out, set);
  write_stats_sidecar(out, set);
  write_manifest(paths, "segment-" + split, split, 0, inputs);
  return out;
}

std::filesystem::path run_sample(const PipelinePaths& paths,
                                 const std::vector<std::string>& from_splits,
                                 const ClassCounts& targets, std::uint64_t seed,
                                 const std::string& name, bool restandardize) {
  std::vector<SegmentSet> sources;
  std::vector<fs::path> inputs;
  for (const auto& split : from_splits) {
    const fs::path p = paths.seg_dir() / (split + ".ecgseg");
    auto set = read_segment_store(p);
    set.role = role_for_split(split);
    if (set.role == SplitRole::test)
      throw TestSplitInTraining("sampling from test split " + split);
    sources.push_back(std::move(set));
    inputs.push_back(p);
  }

  SegmentSet out;
  out.name = name;
  out.role = SplitRole::train;
  for (const auto& s : sources) out.record_ids.push_back(s.name);
  out.segments = balanced_sample(sources, targets, seed);
  if (restandardize && !out.segments.empty()) {
    auto stats = standardize(out.segments);
    out.norm_mean = stats.mean;
    out.norm_std = stats.stddev;
  }
  const fs::path p = paths.seg_dir() / (name + ".ecgseg");
  write_segment_store(p, out);
  write_stats_sidecar(p, out);

  std::ostringstream cfg_text;
  for (long t : targets) cfg_text << t << ' ';
  write_manifest(paths, "sample-" + name, cfg_text.str(), seed, inputs);
  return p;
}

SegmentSet load_store_with_role(const std::filesystem::path& path) {
  auto set = read_segment_store(path);
  set.role = role_for_split(set.name);
  return set;
}

std::filesystem::path run_train(const PipelinePaths& paths,
                                const std::filesystem::path& train_store,
                                const RunConfig& cfg, const std::string& name) {
  ensure_dir(paths.model_dir());
  auto set = load_store_with_role(train_store);
  if (!set.segments.empty() &&
      set.segments[0].samples.size() != cfg.model.input_length)
    throw InvalidSpec("store segment length " +
                      std::to_string(set.segments[0].samples.size()) +
                      " vs configured input_length " +
                      std::to_string(cfg.model.input_length));

  auto model = nn::build_model(cfg.model, cfg.train.seed);
  auto history = train(model, set, cfg.train);

  const fs::path ck = paths.model_dir() / (name + ".ecgwts");
  save_checkpoint(ck, model);
  write_history_csv(paths.model_dir() / (name + "_history.csv"), history);
  write_manifest(paths, "train-" + name, serialize_config(cfg), cfg.train.seed,
                 {train_store});

  std::cout << "trained " << name << ": " << history.epochs.size()
            << " epochs, stop=" << history.stop_reason << ", best epoch "
            << history.best_epoch << "\n";
  return ck;
}

std::vector<AamiClass> predict(nn::BuiltModel& model,
                               const std::vector<Segment>& segments,
                               std::size_t batch_size) {
  std::vector<AamiClass> out;
  out.reserve(segments.size());
  model.set_requires_grad(false);
  std::vector<std::size_t> idx(segments.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t begin = 0; begin < segments.size(); begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, segments.size());
    auto batch = make_batch(segments, idx, begin, end, nullptr);
    auto probs = model_forward(model, batch, nn::Mode::infer);
    const std::size_t k = probs->shape[1];
    for (std::size_t i = 0; i < end - begin; ++i) {
      std::size_t arg = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (probs->value[i * k + j] > probs->value[i * k + arg]) arg = j;
      out.push_back(static_cast<AamiClass>(arg));
    }
  }
  model.set_requires_grad(true);
  return out;
}

EvalResult run_eval(const PipelinePaths& paths,
                    const std::filesystem::path& checkpoint,
                    const std::vector<std::filesystem::path>& test_stores,
                    const std::string& tag, bool per_class,
                    std::size_t batch_size) {
  if (!fs::exists(checkpoint))
    throw MissingCheckpoint(checkpoint.string());
  auto model = nn::load_model(checkpoint);

  std::vector<Segment> segments;
  for (const auto& p : test_stores) {
    auto set = read_segment_store(p);
    for (auto& s : set.segments) segments.push_back(std::move(s));
  }
  if (segments.empty()) throw EmptyInput("no test segments");

  std::vector<AamiClass> truth;
  truth.reserve(segments.size());
  for (const auto& s : segments) truth.push_back(s.label);
  auto predicted = predict(model, segments, batch_size);

  EvalResult result;
  result.cm = confusion_matrix(predicted, truth);

  std::vector<AamiClass> classes =
      per_class ? std::vector<AamiClass>{AamiClass::N, AamiClass::SVEB,
                                         AamiClass::VEB, AamiClass::F,
                                         AamiClass::Q}
                : std::vector<AamiClass>{AamiClass::SVEB, AamiClass::VEB};
  for (AamiClass c : classes)
    result.rows.push_back({tag, c, class_metrics(result.cm, c)});

  result.report_text = format_report(result.rows);
  ensure_dir(paths.report_dir());
  result.csv_path = paths.report_dir() / (tag + ".csv");
  std::ofstream csv(result.csv_path);
  csv << format_csv(result.rows);
  write_manifest(paths, "eval-" + tag, checkpoint.string(), 0, test_stores);
  return result;
}

void run_inspect(const std::filesystem::path& checkpoint,
                 const std::filesystem::path& store, std::size_t index,
                 const std::filesystem::path& csv_out, bool normalize) {
  if (!fs::exists(checkpoint)) throw MissingCheckpoint(checkpoint.string());
  auto model = nn::load_model(checkpoint);
  auto set = read_segment_store(store);
  if (index >= set.segments.size())
    throw InvalidValue("segment index " + std::to_string(index) +
                       " out of range (store has " +
                       std::to_string(set.segments.size()) + ")");
  std::ofstream f(csv_out);
  if (!f) throw DataError("cannot write " + csv_out.string());
  f << inspection_csv(model, set.segments[index], normalize);
}

ExperimentRecipe recipe_for_tag(const std::string& tag) {
  ExperimentRecipe r;
  r.tag = tag;
  if (tag == "T1") {
    r.train_sources = {"DS1"};
    r.test_sources = {"DST1"};
  } else if (tag == "T2") {
    r.train_sources = {"DS1", "DS2"};
    r.test_sources = {"DST1"};
    r.balanced_sampling = true;
    r.sample_targets = {17000, 17000, 17000, 546, 217};
  } else if (tag == "T3a") {
    r.train_sources = {"DS1", "DST1"};
    r.test_sources = {"DST2"};
  } else if (tag == "T3b") {
    r.test_sources = {"DST2"};
    r.needs_pretrained = true;
  } else if (tag == "T4") {
    r.test_sources = {"DST1", "DST2"};
    r.needs_pretrained = true;
  } else {
    throw InvalidValue("unknown experiment tag '" + tag +
                       "' (expected T1, T2, T3a, T3b or T4)");
  }
  return r;
}

EvalResult run_experiment(const PipelinePaths& paths,
                          const ExperimentOptions& opts) {
  const auto recipe = recipe_for_tag(opts.tag);
  const auto splits =
      resolve_split_lists(paths.data_dirs, opts.splits_file);

  std::vector<std::string> needed = recipe.train_sources;
  needed.insert(needed.end(), recipe.test_sources.begin(),
                recipe.test_sources.end());
  for (const auto& split : needed) {
    if (!fs::exists(paths.seg_dir() / (split + ".ecgseg")))
      run_segment(paths, split, splits, opts.config.preprocess);
  }

  fs::path checkpoint;
  if (recipe.needs_pretrained) {
    if (!opts.pretrained)
      throw MissingCheckpoint(opts.tag +
                              " needs a pretrained checkpoint (--checkpoint)");
    checkpoint = *opts.pretrained;
  } else {
    fs::path train_store;
    if (recipe.balanced_sampling) {
      train_store = run_sample(paths, recipe.train_sources,
                               recipe.sample_targets, opts.config.train.seed,
                               opts.tag + "train");
    } else if (recipe.train_sources.size() == 1) {
      train_store = paths.seg_dir() / (recipe.train_sources[0] + ".ecgseg");
    } else {
      // Merge, then standardize the merged collection as one training set.
      SegmentSet merged;
      merged.name = opts.tag + "train";
      merged.role = SplitRole::train;
      for (const auto& split : recipe.train_sources) {
        auto set = read_segment_store(paths.seg_dir() / (split + ".ecgseg"));
        merged.record_ids.push_back(split);
        for (auto& s : set.segments) merged.segments.push_back(std::move(s));
      }
      auto stats = standardize(merged.segments);
      merged.norm_mean = stats.mean;
      merged.norm_std = stats.stddev;
      train_store = paths.seg_dir() / (merged.name + ".ecgseg");
      write_segment_store(train_store, merged);
      write_stats_sidecar(train_store, merged);
    }
    checkpoint = run_train(paths, train_store, opts.config, opts.tag);
  }

  std::vector<fs::path> test_stores;
  for (const auto& split : recipe.test_sources)
    test_stores.push_back(paths.seg_dir() / (split + ".ecgseg"));
  return run_eval(paths, checkpoint, test_stores, opts.tag, opts.per_class,
                  opts.config.train.batch_size);
}

}  // namespace ecg
