#pragma once

// Maximum Density Divergence in its population, all-pairs and batch forms,
// plus the baseline divergences it is compared against.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atm/tensor.hpp"

namespace atm {

enum class Domain { source, target };

const char* to_string(Domain d);

/// Rows of `features` are samples. Labels, when present, are class indices.
struct SampleSet {
  Tensor features;
  std::optional<std::vector<int>> labels;
  Domain domain = Domain::source;

  SampleSet() = default;
  SampleSet(Tensor features, std::optional<std::vector<int>> labels, Domain domain);

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  bool has_labels() const { return labels.has_value(); }

  /// Throws std::invalid_argument when n < 1, d < 1 or labels disagree with n.
  void validate() const;
};

/// A probability vector over a finite alphabet; row i of `points` embeds symbol i.
class FiniteDist {
 public:
  FiniteDist(std::vector<double> probs, Tensor points);
  /// Embeds symbol i as the i-th standard basis vector.
  static FiniteDist one_hot(std::vector<double> probs);
  static FiniteDist point_mass(std::size_t alphabet, std::size_t symbol);

  std::size_t alphabet_size() const { return probs_.size(); }
  std::size_t dim() const { return points_.cols(); }
  std::span<const double> probs() const { return probs_; }
  const Tensor& points() const { return points_; }

 private:
  std::vector<double> probs_;
  Tensor points_;
};

enum class Norm { squared_l2, l1 };

/// Exact expectation form: cross term plus both intra-domain terms, each a
/// double sum over the supports.
double mdd_population(const FiniteDist& p, const FiniteDist& q, Norm norm = Norm::squared_l2);

/// All-pairs finite-sample MDD. Within-set pairs include i = j.
/// Exactly symmetric in its arguments.
double mdd_full(const SampleSet& s, const SampleSet& t);

struct MddTerms {
  Tensor cross;          // (1/n_b) Σ‖sfᵢ − tfᵢ‖²
  Tensor source_intra;   // mean over same-label source pairs i < j
  Tensor target_intra;   // mean over same-(pseudo)label target pairs i < j
  std::size_t source_pairs = 0;
  std::size_t target_pairs = 0;
};

/// The three batch terms. Terms without a qualifying pair are exactly 0.
MddTerms mdd_batch_terms(const Tensor& sf, const Tensor& tf, std::span<const int> ys, std::span<const int> yt);

/// Differentiable batch MDD with relative-position pairing for the cross
/// term and same-label pairs for the intra terms. `mask` selects terms 1-3.
Tensor mdd_batch(const Tensor& sf, const Tensor& tf, std::span<const int> ys, std::span<const int> yt,
                 std::array<bool, 3> mask = {true, true, true});

/// 2·E‖xs−xt‖ − E‖xs−xs′‖ − E‖xt−xt′‖ over all pairs (unsquared norm).
double energy_distance(const SampleSet& s, const SampleSet& t);

/// Biased (V-statistic) MMD² with a Gaussian kernel.
double mmd_gaussian(const SampleSet& s, const SampleSet& t, double bandwidth);

/// Symmetric KL. Returns +infinity when the supports differ.
double jeffreys_kl(const FiniteDist& p, const FiniteDist& q);
double total_variation(const FiniteDist& p, const FiniteDist& q);

struct LemmaAuditReport {
  std::int64_t trials = 0;
  double frac_lemma1_holds = 0.0;  // MDD ≤ Jeffreys
  double frac_lemma2_holds = 0.0;  // MDD ≤ 4·TV²
  double max_violation_magnitude = 0.0;
  // MDD(P, P) over independently drawn full-support P.
  double mdd_pp_mean = 0.0;
  double mdd_pp_max = 0.0;
  double mdd_pp_min = 0.0;
  std::int64_t mdd_pp_positive = 0;
  // Over all (P, Q) pairs.
  double min_mdd = 0.0;
  std::int64_t point_mass_trials = 0;
  double point_mass_max_mdd = 0.0;

  /// Flat JSON object with keys trials, frac_lemma1, frac_lemma2,
  /// max_violation, mdd_pp_mean, mdd_pp_max.
  std::string to_json() const;
};

/// Samples distribution pairs over a one-hot alphabet and measures how often
/// the Jeffreys and 4·TV² upper bounds hold. Trials cycle through coincident
/// point masses, independent point masses, Dirichlet(1) pairs and
/// sparse-support Dirichlet pairs, starting with a coincident pair.
LemmaAuditReport lemma_audit(std::int64_t trials, std::size_t alphabet_size, std::uint64_t seed);

}  // namespace atm
