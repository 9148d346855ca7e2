#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atm/divergence.hpp"
#include "atm/models.hpp"

namespace atm {

struct LrDecay {
  double gamma = 10.0;
  double beta = 0.75;
};

struct TrainConfig {
  double alpha = 0.01;
  double lambda = 1.0;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 32;
  std::int64_t max_epochs = 300;
  std::uint64_t seed = 0;
  std::array<bool, 3> term_mask{true, true, true};
  // Multiplies the reversal coefficient by 2/(1+exp(-10·progress)) - 1.
  bool grl_ramp = false;
  std::optional<LrDecay> lr_decay;
  double grl_coeff = 1.0;
  // Stop once total_loss has moved less than 1e-6 between consecutive epochs
  // for 10 epochs in a row.
  bool early_stop = true;

  std::size_t per_domain_batch() const { return batch_size / 2; }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct EpochMetrics {
  std::int64_t epoch = 0;
  double cls_loss = 0.0;
  double dom_loss = 0.0;
  double mdd_loss = 0.0;
  double total_loss = 0.0;
  double source_acc = 0.0;
  double target_acc = 0.0;  // NaN when the target is unlabeled
  double pseudo_acc = 0.0;  // NaN when the target is unlabeled
  double mdd_value = 0.0;
};

struct MetricsLog {
  std::vector<EpochMetrics> rows;

  static const char* header();
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  static MetricsLog parse_csv(const std::string& text);
};

struct BatchIndices {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
};

/// Pairs of equally sized source/target index batches for one epoch. Each
/// domain is walked round-robin through its own shuffled order, so the larger
/// domain is covered once before anything repeats and the smaller one recycles.
class HalfHalfSampler {
 public:
  HalfHalfSampler(std::size_t source_size, std::size_t target_size, std::size_t n_b, std::uint64_t seed,
                  std::int64_t epoch);

  std::size_t num_batches() const { return num_batches_; }
  std::size_t n_b() const { return n_b_; }
  bool done() const { return next_ == num_batches_; }
  BatchIndices next();

 private:
  std::size_t n_b_;
  std::size_t num_batches_;
  std::size_t next_ = 0;
  std::vector<std::size_t> source_order_;
  std::vector<std::size_t> target_order_;
};

/// Every batch of one epoch, in order.
std::vector<BatchIndices> half_half_sampler(const SampleSet& source, const SampleSet& target, std::size_t n_b,
                                            std::uint64_t seed, std::int64_t epoch);

std::vector<int> pseudo_label(const AtmModel& model, const Tensor& xt);

/// v ← momentum·v + grad + weight_decay·param; param ← param − lr·v.
void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr,
                double momentum, double weight_decay);

class Sgd {
 public:
  explicit Sgd(const AtmModel& model);
  void step(const AtmModel& model, double lr, double momentum, double weight_decay);
  const std::vector<std::vector<double>>& velocity() const { return velocity_; }

 private:
  std::vector<std::vector<double>> velocity_;
};

struct StepResult {
  double cls_loss = 0.0;
  double dom_loss = 0.0;
  double mdd_loss = 0.0;
  double total_loss = 0.0;  // cls + lambda·dom + alpha·mdd
  double mdd_value = 0.0;   // all three terms, regardless of the mask
  std::vector<int> pseudo_labels;
};

struct Schedule {
  double lr = 0.0;
  double grl_coeff = 0.0;
};

/// Learning rate and reversal coefficient at progress ∈ [0, 1].
Schedule schedule_at(const TrainConfig& config, double progress);

/// One optimisation step on a source batch (xs, ys) and a target batch xt.
StepResult step(AtmModel& model, Sgd& optimizer, const Tensor& xs, std::span<const int> ys, const Tensor& xt,
                const TrainConfig& config, const Schedule& schedule);

/// Fraction of argmax predictions equal to the labels.
double accuracy(const AtmModel& model, const SampleSet& s);

struct TrainResult {
  AtmModel model;
  MetricsLog log;
};

/// Trains `model` in place of a copy. Target labels, when present, only feed the log.
TrainResult run(const AtmModel& model, const SampleSet& source, const SampleSet& target, const TrainConfig& config);

}  // namespace atm
