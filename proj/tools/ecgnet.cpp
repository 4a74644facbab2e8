// Command-line front end for the ECG classification pipeline.
//
// Subcommands mirror the pipeline stages: ingest, preprocess, segment,
// sample, train, eval, inspect, plus `experiment` which chains a full
// T1..T4 recipe. Exit codes: 0 success, 2 usage, 3 data, 4 numeric.

#include <CLI11.hpp>
#include <iostream>

#include "ecg/pipeline.hpp"

namespace {

struct GlobalFlags {
  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> data_dirs;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int precision = 0;  // 0 = from config
};

ecg::PipelinePaths make_paths(const GlobalFlags& g) {
  ecg::PipelinePaths paths;
  paths.out_dir = g.out_dir;
  for (const auto& d : g.data_dirs) paths.data_dirs.emplace_back(d);
  return paths;
}

ecg::RunConfig make_config(const GlobalFlags& g) {
  ecg::RunConfig cfg;
  if (!g.config_path.empty()) cfg = ecg::load_config(g.config_path);
  if (g.seed_set) cfg.train.seed = g.seed;
  if (g.precision != 0) cfg.train.precision = g.precision;
  return cfg;
}

ecg::ClassCounts parse_targets(const std::string& text) {
  // "N=17000,SVEB=17000,VEB=17000,F=546,Q=217"
  ecg::ClassCounts targets{};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto eq = item.find('=');
    if (eq == std::string::npos)
      throw ecg::InvalidValue("target '" + item + "' is not CLASS=N");
    auto cls = ecg::aami_class_from_string(item.substr(0, eq));
    if (!cls) throw ecg::InvalidValue("unknown class '" + item + "'");
    targets[static_cast<std::size_t>(*cls)] = std::stol(item.substr(eq + 1));
  }
  return targets;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inter-patient ECG classification pipeline"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  GlobalFlags g;
  app.add_option("--config", g.config_path, "run configuration file");
  app.add_option("--out-dir", g.out_dir, "artifact output directory");
  app.add_option("--data", g.data_dirs, "WFDB data directory (repeatable)");
  auto* seed_opt = app.add_option("--seed", g.seed, "run seed");
  app.add_option("--precision", g.precision, "float precision (32 or 64)")
      ->check(CLI::IsMember({0, 32, 64}));

  // ingest
  auto* ingest = app.add_subcommand("ingest", "decode WFDB records to mV");
  std::vector<std::string> ingest_records;
  std::string channel = "auto";
  ingest->add_option("--records", ingest_records,
                     "record ids (default: every .hea in the data dirs)");
  ingest->add_option("--channel", channel, "channel name or 'auto'");

  // preprocess
  auto* preprocess =
      app.add_subcommand("preprocess", "filter and resample to 180 Hz");

  // segment
  auto* segment = app.add_subcommand("segment", "build a labeled split store");
  std::string split_name;
  std::string splits_file;
  segment->add_option("--split", split_name, "DS1, DST1, DS2 or DST2")
      ->required();
  segment->add_option("--splits-file", splits_file,
                      "override file with per-split record ids");

  // sample
  auto* sample =
      app.add_subcommand("sample", "balanced non-replacement sampling");
  std::vector<std::string> sample_from;
  std::string sample_targets = "N=17000,SVEB=17000,VEB=17000,F=546,Q=217";
  std::string sample_name = "sampled";
  sample->add_option("--from", sample_from, "source split names")->required();
  sample->add_option("--targets", sample_targets, "per-class draw targets");
  sample->add_option("--name", sample_name, "output store name");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model on a store");
  std::string train_store;
  std::string train_name = "model";
  train_cmd->add_option("--store", train_store, "training segment store")
      ->required();
  train_cmd->add_option("--name", train_name, "checkpoint name");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_checkpoint;
  std::vector<std::string> eval_stores;
  std::string eval_tag = "eval";
  bool per_class = false;
  eval_cmd->add_option("--checkpoint", eval_checkpoint)->required();
  eval_cmd->add_option("--store", eval_stores, "test segment store(s)")
      ->required();
  eval_cmd->add_option("--tag", eval_tag, "report row tag");
  eval_cmd->add_flag("--per-class", per_class, "emit all five classes");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "activation-map CSV dump");
  std::string inspect_checkpoint, inspect_store, inspect_out = "inspect.csv";
  std::size_t inspect_index = 0;
  bool normalize = false;
  inspect->add_option("--checkpoint", inspect_checkpoint)->required();
  inspect->add_option("--store", inspect_store)->required();
  inspect->add_option("--index", inspect_index, "segment index in the store");
  inspect->add_option("--csv", inspect_out, "output CSV path");
  inspect->add_flag("--normalize", normalize, "scale maps to max 1");

  // experiment
  auto* experiment = app.add_subcommand("experiment", "run a T1..T4 recipe");
  std::string exp_tag;
  std::string exp_checkpoint;
  std::string exp_splits_file;
  bool exp_per_class = false;
  experiment->add_option("--tag", exp_tag, "T1, T2, T3a, T3b or T4")
      ->required();
  experiment->add_option("--checkpoint", exp_checkpoint,
                         "pretrained checkpoint (T3b, T4)");
  experiment->add_option("--splits-file", exp_splits_file,
                         "override file with per-split record ids");
  experiment->add_flag("--per-class", exp_per_class);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp" ||
        e.get_name() == "CallForVersion")
      return app.exit(e);
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }
  g.seed_set = seed_opt->count() > 0;

  try {
    auto paths = make_paths(g);
    auto cfg = make_config(g);

    if (*ingest) {
      ecg::run_ingest(paths, ingest_records, channel);
    } else if (*preprocess) {
      ecg::run_preprocess(paths, cfg.preprocess);
    } else if (*segment) {
      auto lists = ecg::resolve_split_lists(
          paths.data_dirs, std::filesystem::path(splits_file));
      auto p = ecg::run_segment(paths, split_name, lists, cfg.preprocess);
      std::cout << "wrote " << p.string() << "\n";
    } else if (*sample) {
      auto p = ecg::run_sample(paths, sample_from,
                               parse_targets(sample_targets), cfg.train.seed,
                               sample_name);
      std::cout << "wrote " << p.string() << "\n";
    } else if (*train_cmd) {
      auto p = ecg::run_train(paths, train_store, cfg, train_name);
      std::cout << "wrote " << p.string() << "\n";
    } else if (*eval_cmd) {
      std::vector<std::filesystem::path> stores(eval_stores.begin(),
                                                eval_stores.end());
      auto result =
          ecg::run_eval(paths, eval_checkpoint, stores, eval_tag, per_class);
      std::cout << result.report_text;
      std::cout << "wrote " << result.csv_path.string() << "\n";
    } else if (*inspect) {
      ecg::run_inspect(inspect_checkpoint, inspect_store, inspect_index,
                       inspect_out, normalize);
      std::cout << "wrote " << inspect_out << "\n";
    } else if (*experiment) {
      ecg::ExperimentOptions opts;
      opts.tag = exp_tag;
      opts.config = cfg;
      if (!exp_splits_file.empty()) opts.splits_file = exp_splits_file;
      if (!exp_checkpoint.empty()) opts.pretrained = exp_checkpoint;
      opts.per_class = exp_per_class;
      auto result = ecg::run_experiment(paths, opts);
      std::cout << result.report_text;
      std::cout << "wrote " << result.csv_path.string() << "\n";
    }
  } catch (const ecg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
