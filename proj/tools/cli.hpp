#pragma once

// Command implementations behind the slicemoa executable. Commands write their
// human-readable output to `out` and their artifacts under the run's output directory.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slicemoa/slicemoa.hpp"

namespace slicemoa::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
  kExitContract = 5,
};

struct DataConfig {
  /// Either one file that is split, or three pre-split files.
  std::optional<std::filesystem::path> path;
  std::optional<std::filesystem::path> train, val, test;
  LoadOptions load;
  SplitSpec split = SplitSpec::from_fractions({0.7, 0.1, 0.2});
  std::uint64_t split_seed = 0;
};

struct BackboneConfig {
  std::optional<std::filesystem::path> cache;
  std::optional<std::size_t> hashing;
};

struct RunConfig {
  DataConfig data;
  BackboneConfig backbone;
  std::vector<SliceSpec> slices;
  SliceOptions slice_options;
  /// Slice functions see the text as stored in the file unless this is set, in which
  /// case they see the lowercased text.
  bool slice_on_normalized = false;
  ModelKind model_kind = ModelKind::sbl_moa;
  std::size_t hidden = 128;
  double dropout = 0.5;
  bool bias = false;
  MoAConfig moa;
  TrainConfig train;
  std::size_t runs = 1;
  std::optional<std::string> name;
  std::filesystem::path output_dir;

  void validate() const;
  /// Seed of run r: seed + r.
  std::uint64_t run_seed(std::size_t r) const { return train.seed + r; }
  std::filesystem::path run_dir(std::size_t r) const { return output_dir / ("run-" + std::to_string(r)); }
  std::filesystem::path checkpoint(std::size_t r) const { return run_dir(r) / "model.ckpt"; }
};

/// Parses a run configuration; relative paths resolve against `base_dir`.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Command-line values that replace configuration fields when present.
struct Overrides {
  std::optional<std::string> model;
  std::optional<std::string> phi;
  std::optional<std::string> combine_op;
  std::optional<double> tau;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> runs;
  std::optional<std::filesystem::path> output_dir;
  bool expert_confidence = false;
  bool stochastic_eval = false;
};

void apply_overrides(RunConfig& cfg, const Overrides& o);

/// Loaded, split, sliced and embedded data for one configuration.
struct PreparedData {
  std::vector<std::string> labels;
  SliceSchema schema;
  /// train, val, test
  std::vector<TextDataset> splits;
  std::vector<LabeledSplit> labeled;
  std::size_t dim = 0;
  std::string backbone;
};

PreparedData prepare_data(const RunConfig& cfg, bool embed = true);

/// Display name: the configured name, or one derived from the model settings.
std::string model_name(const ModelMetadata& meta);

struct EvalOptions {
  std::vector<std::filesystem::path> checkpoints;
  std::optional<std::filesystem::path> baseline_report;
  LiftMode lift_mode = LiftMode::points;
  std::string split = "test";
};

struct ReportOptions {
  std::vector<std::filesystem::path> reports;
  std::optional<std::string> baseline;
  std::optional<std::filesystem::path> baseline_report;
  LiftMode lift_mode = LiftMode::points;
  std::optional<std::filesystem::path> out;
};

struct AttentionOptions {
  std::optional<std::filesystem::path> checkpoint;
  std::vector<std::string> ids;
  std::string split = "test";
};

int cmd_slices(const RunConfig& cfg, std::ostream& out);
int cmd_train(const RunConfig& cfg, std::ostream& out);
SliceReport evaluate_checkpoints(const RunConfig& cfg, const EvalOptions& opt);
int cmd_eval(const RunConfig& cfg, const EvalOptions& opt, std::ostream& out);
int cmd_report(const ReportOptions& opt, std::ostream& out);
int cmd_attention(const RunConfig& cfg, const AttentionOptions& opt, std::ostream& out);

/// Parses arguments, runs one command and maps errors to exit codes.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace slicemoa::cli
