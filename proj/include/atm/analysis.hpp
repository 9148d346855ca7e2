#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "atm/divergence.hpp"
#include "atm/models.hpp"
#include "atm/trainer.hpp"

namespace atm {

/// Fraction of target rows whose argmax prediction equals the label.
double target_accuracy(const AtmModel& model, const SampleSet& target);

struct ADistanceOptions {
  double learning_rate = 0.5;
  double l2 = 1e-4;
  std::size_t max_iterations = 5000;
  double tolerance = 1e-7;  // on the max-norm of the gradient
};

/// Proxy A-distance 2(1 − 2ε) from the held-out error ε of a logistic
/// classifier separating the rows of `source` (label 1) from `target`.
/// Each domain is shuffled and split in half; clamped to [0, 2].
double a_distance(const Tensor& source, const Tensor& target, std::uint64_t seed,
                  const ADistanceOptions& options = {});

struct AblationCell {
  std::string id;  // T1 … T8
  std::array<bool, 3> term_mask{};
  std::vector<std::uint64_t> seeds;
  std::vector<double> accs;  // NaN where the run failed
  std::vector<std::string> errors;  // empty where the run succeeded
  std::vector<MetricsLog> logs;
  double mean_acc = 0.0;  // over successful runs; NaN if none
};

/// The eight term masks: T1 none, T2-T4 single terms, T5-T7 pairs, T8 all.
const std::array<std::array<bool, 3>, 8>& ablation_masks();

/// Runs every mask × seed. Model and sampling are seeded by the run seed.
/// Failures are recorded in their cell and the grid continues.
std::vector<AblationCell> ablation_grid(const SampleSet& source, const SampleSet& target, const ModelSpec& model,
                                        const TrainConfig& base_config, std::span<const std::uint64_t> seeds);

/// Rows setting,term1,term2,term3,seed,target_acc; each setting ends with a
/// `mean` row.
std::string format_ablation_csv(const std::vector<AblationCell>& cells);

std::vector<std::pair<std::int64_t, double>> pseudo_accuracy_curve(const MetricsLog& log);

struct FeatureTable {
  Tensor features;
  std::vector<int> labels;  // -1 for unlabeled rows
  std::vector<Domain> domains;
};

/// Learned features of every row of every set.
FeatureTable extract_features(const AtmModel& model, std::span<const SampleSet> sets);
/// CSV rows feature…,label,domain_tag with a header line.
std::string format_features_csv(const FeatureTable& table);
FeatureTable parse_features_csv(const std::string& text);
void export_features(const AtmModel& model, std::span<const SampleSet> sets, const std::filesystem::path& path);
FeatureTable load_features(const std::filesystem::path& path);

}  // namespace atm
