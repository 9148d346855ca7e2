#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "atm/datasets.hpp"
#include "atm/models.hpp"
#include "atm/trainer.hpp"

namespace atm {

/// Where one domain's samples come from.
struct DataSource {
  std::string kind = "two_moons";  // two_moons | csv | idx
  std::size_t n = 1000;
  double noise = 0.1;
  std::uint64_t seed = 0;
  std::string path;    // csv
  std::string images;  // idx
  std::string labels;  // idx
};

struct DataConfig {
  DataSource source;
  DataSource target;
  std::optional<ShiftSpec> shift;  // applied to the target
  std::uint64_t shift_seed = 2;
  bool standardize = true;  // both domains with source statistics
};

struct ModelConfig {
  std::vector<std::size_t> hidden{32, 32};
  std::size_t d_f = 16;
  std::size_t num_classes = 2;
  std::size_t disc_hidden = 32;

  ModelSpec spec(std::size_t input_dim) const;
};

struct AnalysisConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string output_dir = "out";
  bool export_features = true;
};

/// JSON object with sections data, model, train, analysis. Missing keys take
/// the defaults below; unknown keys are rejected.
struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  AnalysisConfig analysis;

  /// The rotated two-moons task.
  static ExperimentConfig defaults();
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  std::string to_json() const;
  void validate() const;
};

struct DomainPair {
  SampleSet source;
  SampleSet target;
};

/// Loads or generates both domains, shifts the target and standardizes.
DomainPair prepare_data(const DataConfig& config);

}  // namespace atm
