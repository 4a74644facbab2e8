#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ecg/config.hpp"
#include "ecg/evaluation.hpp"
#include "ecg/segmentation.hpp"
#include "ecg/training.hpp"

namespace ecg {

// Per-split record id lists. DS1/DST1 default to the fixed mitdb lists;
// DS2/DST2 come from the even/odd split of whatever svdb records are on
// disk, unless an override file ("DS1: 101 106 ...") replaces them.
struct SplitLists {
  std::map<std::string, std::vector<std::string>> lists;

  const std::vector<std::string>& for_split(const std::string& name) const;
};

SplitLists resolve_split_lists(const std::vector<std::filesystem::path>& data_dirs,
                               const std::filesystem::path& override_file = {});
SplitLists parse_split_lists(const std::string& text);

struct PipelinePaths {
  std::vector<std::filesystem::path> data_dirs;  // WFDB .hea/.dat/.ann
  std::filesystem::path out_dir;

  std::filesystem::path raw_dir() const { return out_dir / "raw"; }
  std::filesystem::path pre_dir() const { return out_dir / "pre"; }
  std::filesystem::path seg_dir() const { return out_dir / "seg"; }
  std::filesystem::path model_dir() const { return out_dir / "models"; }
  std::filesystem::path report_dir() const { return out_dir / "reports"; }
};

// Stage functions; each reads/writes the documented container formats
// and appends a manifest entry. All throw ecg::Error subtypes.

void run_ingest(const PipelinePaths& paths,
                const std::vector<std::string>& records,
                const std::string& channel = "auto");

void run_preprocess(const PipelinePaths& paths, const PreprocessConfig& cfg,
                    const std::vector<std::string>& records = {});

// Builds one split store (ingesting/preprocessing missing records first)
// and returns its path.
std::filesystem::path run_segment(const PipelinePaths& paths,
                                  const std::string& split,
                                  const SplitLists& splits,
                                  const PreprocessConfig& cfg);

std::filesystem::path run_sample(const PipelinePaths& paths,
                                 const std::vector<std::string>& from_splits,
                                 const ClassCounts& targets, std::uint64_t seed,
                                 const std::string& name,
                                 bool restandardize = true);

std::filesystem::path run_train(const PipelinePaths& paths,
                                const std::filesystem::path& train_store,
                                const RunConfig& cfg, const std::string& name);

struct EvalResult {
  ConfusionMatrix cm;
  std::vector<ExperimentRow> rows;
  std::string report_text;
  std::filesystem::path csv_path;
};

EvalResult run_eval(const PipelinePaths& paths,
                    const std::filesystem::path& checkpoint,
                    const std::vector<std::filesystem::path>& test_stores,
                    const std::string& tag, bool per_class,
                    std::size_t batch_size = 50);

void run_inspect(const std::filesystem::path& checkpoint,
                 const std::filesystem::path& store, std::size_t index,
                 const std::filesystem::path& csv_out, bool normalize);

// The T1..T4 assemblies over the stages above.
struct ExperimentRecipe {
  std::string tag;
  std::vector<std::string> train_sources;
  std::vector<std::string> test_sources;
  bool balanced_sampling = false;
  ClassCounts sample_targets{};
  bool needs_pretrained = false;
};

ExperimentRecipe recipe_for_tag(const std::string& tag);

struct ExperimentOptions {
  std::string tag;
  RunConfig config;
  std::filesystem::path splits_file;
  std::optional<std::filesystem::path> pretrained;  // T3b / T4
  bool per_class = false;
};

EvalResult run_experiment(const PipelinePaths& paths,
                          const ExperimentOptions& opts);

// Prediction labels for a segment list, batched in infer mode.
std::vector<AamiClass> predict(nn::BuiltModel& model,
                               const std::vector<Segment>& segments,
                               std::size_t batch_size = 50);

SegmentSet load_store_with_role(const std::filesystem::path& path);

void write_manifest(const PipelinePaths& paths, const std::string& stage,
                    const std::string& config_text, std::uint64_t seed,
                    const std::vector<std::filesystem::path>& inputs);

}  // namespace ecg
