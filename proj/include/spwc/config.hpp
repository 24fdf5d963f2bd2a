#pragma once

// Experiment configuration: a JSON document whose every key is known.
// Diagnostics name the offending field path, e.g. "methods[2].lambda".

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spwc/self_paced.hpp"
#include "spwc/task_stream.hpp"
#include "spwc/trainer.hpp"

namespace spwc {

/// Environment variable consulted for the IDX directory when the config has no stream.data_dir.
inline constexpr const char* kDataDirEnv = "SPWC_DATA_DIR";

/// One method entry and the hyperparameter grid it spans.
struct MethodGrid {
  std::string name;                // results label, defaults to the tag
  MethodTag tag = MethodTag::finetune;
  std::vector<double> strengths;   // lambda (EWC family) or gamma (MAS family); {0} otherwise
  std::vector<MuPolicy> mu;        // self-paced methods only
  RegularizerKind regularizer = RegularizerKind::proposed;
  double online_decay = 1.0;
};

struct ExperimentConfig {
  StreamSpec stream;
  std::filesystem::path data_dir;  // resolved; empty for synthetic streams
  std::vector<std::size_t> hidden{400, 400};
  TrainingOptions training;        // training.lr is ignored, see lrs
  std::vector<double> lrs{1e-2};
  std::vector<MethodGrid> methods;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::filesystem::path output{"results"};
};

/// One point of the method x grid x seed expansion.
struct RunSpec {
  std::size_t index = 0;  // position in the expansion; merge order
  std::string name;
  Method method;
  double lr = 0.0;
  std::uint64_t seed = 0;
};

/// Parses a config, or the "config" member of a manifest. Relative paths
/// resolve against stream.data_dir, else $SPWC_DATA_DIR, else `base_dir`.
/// Throws UsageError with the field path on any problem.
ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Resolved config as JSON (absolute paths, every default spelled out).
/// parse_config(config_to_json(c), any) reproduces c.
std::string config_to_json(const ExperimentConfig& config);

/// Methods in config order, then lr, strength, mu, then seeds.
std::vector<RunSpec> expand_grid(const ExperimentConfig& config);

}  // namespace spwc
