#include "atm/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "atm/errors.hpp"
#include "atm/rng.hpp"
#include "json.hpp"

namespace atm {

namespace {

double sq_l2(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double diff = a[k] - b[k];
    s += diff * diff;
  }
  return s;
}

double l1(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += std::abs(a[k] - b[k]);
  return s;
}

const double* row_ptr(const Tensor& t, std::size_t r) { return t.data().data() + r * t.cols(); }

void require_same_dim(const char* op, const SampleSet& s, const SampleSet& t) {
  s.validate();
  t.validate();
  if (s.dim() != t.dim()) {
    throw DimensionError(std::string(op) + ": feature dimensions differ, " + std::to_string(s.dim()) + " vs " +
                         std::to_string(t.dim()));
  }
}

// Mean of `kernel(a, b)` over all ordered pairs a ∈ x, b ∈ y.
template <typename K>
double mean_pairs(const Tensor& x, const Tensor& y, K kernel) {
  const std::size_t d = x.cols();
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < y.rows(); ++j) s += kernel(row_ptr(x, i), row_ptr(y, j), d);
  return s / (static_cast<double>(x.rows()) * static_cast<double>(y.rows()));
}

// Total order on sample sets used to make symmetric quantities evaluate the
// same floating-point sum regardless of argument order.
bool canonical_first(const SampleSet& a, const SampleSet& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  const auto x = a.features.data();
  const auto y = b.features.data();
  return !std::lexicographical_compare(y.begin(), y.end(), x.begin(), x.end());
}

void require_same_alphabet(const FiniteDist& p, const FiniteDist& q) {
  if (p.alphabet_size() != q.alphabet_size() || p.dim() != q.dim()) {
    throw DimensionError("alphabet mismatch: " + std::to_string(p.alphabet_size()) + " vs " +
                         std::to_string(q.alphabet_size()) + " symbols");
  }
  const auto a = p.points().data();
  const auto b = q.points().data();
  if (!std::equal(a.begin(), a.end(), b.begin())) throw DimensionError("alphabet mismatch: embeddings differ");
}

std::vector<double> dirichlet(Rng& rng, std::size_t k, std::span<const std::size_t> support) {
  std::vector<double> p(k, 0.0);
  double total = 0.0;
  for (std::size_t i : support) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    p[i] = -std::log(u);
    total += p[i];
  }
  for (double& v : p) v /= total;
  // Fold the rounding residue into the largest entry so the sum is 1 to ~1 ulp.
  double s = 0.0;
  for (double v : p) s += v;
  *std::max_element(p.begin(), p.end()) += 1.0 - s;
  return p;
}

std::vector<double> point_probs(std::size_t k, std::size_t symbol) {
  std::vector<double> p(k, 0.0);
  p[symbol] = 1.0;
  return p;
}

}  // namespace

const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

SampleSet::SampleSet(Tensor f, std::optional<std::vector<int>> l, Domain d)
    : features(std::move(f)), labels(std::move(l)), domain(d) {
  validate();
}

void SampleSet::validate() const {
  if (features.rows() < 1 || features.cols() < 1) {
    throw std::invalid_argument("sample set must have at least one sample and one feature, got " +
                                features.shape_str());
  }
  if (labels && labels->size() != features.rows()) {
    throw DimensionError("sample set has " + std::to_string(features.rows()) + " rows but " +
                         std::to_string(labels->size()) + " labels");
  }
}

FiniteDist::FiniteDist(std::vector<double> probs, Tensor points) : probs_(std::move(probs)), points_(std::move(points)) {
  if (probs_.empty()) throw std::invalid_argument("finite distribution needs a non-empty alphabet");
  if (points_.rows() != probs_.size()) {
    throw DimensionError("finite distribution has " + std::to_string(probs_.size()) + " probabilities but " +
                         std::to_string(points_.rows()) + " embedded points");
  }
  double total = 0.0;
  for (double v : probs_) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("probabilities must be finite and non-negative");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw std::invalid_argument("probabilities sum to " + std::to_string(total) + ", expected 1");
  }
  const std::size_t d = points_.cols();
  for (std::size_t i = 0; i < points_.rows(); ++i)
    for (std::size_t j = i + 1; j < points_.rows(); ++j)
      if (std::equal(row_ptr(points_, i), row_ptr(points_, i) + d, row_ptr(points_, j))) {
        throw std::invalid_argument("embedded points " + std::to_string(i) + " and " + std::to_string(j) +
                                    " coincide");
      }
}

FiniteDist FiniteDist::one_hot(std::vector<double> probs) {
  const std::size_t k = probs.size();
  Tensor eye = Tensor::zeros(k, k);
  for (std::size_t i = 0; i < k; ++i) eye.mutable_data()[i * k + i] = 1.0;
  return FiniteDist(std::move(probs), std::move(eye));
}

FiniteDist FiniteDist::point_mass(std::size_t alphabet, std::size_t symbol) {
  if (symbol >= alphabet) throw std::invalid_argument("point mass symbol outside the alphabet");
  return one_hot(point_probs(alphabet, symbol));
}

double mdd_population(const FiniteDist& p, const FiniteDist& q, Norm norm) {
  if (p.dim() != q.dim()) {
    throw DimensionError("mdd_population: embedding dimensions differ, " + std::to_string(p.dim()) + " vs " +
                         std::to_string(q.dim()));
  }
  const std::size_t d = p.dim();
  auto dist = norm == Norm::squared_l2 ? sq_l2 : l1;
  auto expect = [&](const FiniteDist& a, const FiniteDist& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.alphabet_size(); ++i) {
      if (a.probs()[i] == 0.0) continue;
      for (std::size_t j = 0; j < b.alphabet_size(); ++j) {
        if (b.probs()[j] == 0.0) continue;
        s += a.probs()[i] * b.probs()[j] * dist(row_ptr(a.points(), i), row_ptr(b.points(), j), d);
      }
    }
    return s;
  };
  return expect(p, q) + expect(p, p) + expect(q, q);
}

double mdd_full(const SampleSet& s, const SampleSet& t) {
  require_same_dim("mdd_full", s, t);
  if (!canonical_first(s, t)) return mdd_full(t, s);
  return mean_pairs(s.features, t.features, sq_l2) + mean_pairs(s.features, s.features, sq_l2) +
         mean_pairs(t.features, t.features, sq_l2);
}

MddTerms mdd_batch_terms(const Tensor& sf, const Tensor& tf, std::span<const int> ys, std::span<const int> yt) {
  if (sf.rows() != tf.rows() || sf.cols() != tf.cols()) {
    throw DimensionError("mdd_batch: source and target batches differ, " + sf.shape_str() + " vs " + tf.shape_str());
  }
  if (sf.rows() < 1) throw EmptyReductionError("mdd_batch: empty batch");
  if (ys.size() != sf.rows() || yt.size() != tf.rows()) {
    throw DimensionError("mdd_batch: " + std::to_string(sf.rows()) + " rows but " + std::to_string(ys.size()) +
                         " source and " + std::to_string(yt.size()) + " target labels");
  }
  MddTerms terms;
  terms.cross = mean(sum_rows(square(sub(sf, tf))));

  auto intra = [](const Tensor& x, std::span<const int> y, std::size_t& count) {
    std::vector<std::size_t> first, second;
    for (std::size_t i = 0; i < y.size(); ++i)
      for (std::size_t j = i + 1; j < y.size(); ++j)
        if (y[i] == y[j]) {
          first.push_back(i);
          second.push_back(j);
        }
    count = first.size();
    if (first.empty()) return Tensor::scalar(0.0);
    return mean(sum_rows(square(sub(select_rows(x, first), select_rows(x, second)))));
  };
  terms.source_intra = intra(sf, ys, terms.source_pairs);
  terms.target_intra = intra(tf, yt, terms.target_pairs);
  return terms;
}

Tensor mdd_batch(const Tensor& sf, const Tensor& tf, std::span<const int> ys, std::span<const int> yt,
                 std::array<bool, 3> mask) {
  const MddTerms terms = mdd_batch_terms(sf, tf, ys, yt);
  Tensor total = Tensor::scalar(0.0);
  if (mask[0]) total = add(total, terms.cross);
  if (mask[1]) total = add(total, terms.source_intra);
  if (mask[2]) total = add(total, terms.target_intra);
  return total;
}

double energy_distance(const SampleSet& s, const SampleSet& t) {
  require_same_dim("energy_distance", s, t);
  auto norm = [](const double* a, const double* b, std::size_t d) { return std::sqrt(sq_l2(a, b, d)); };
  return 2.0 * mean_pairs(s.features, t.features, norm) - mean_pairs(s.features, s.features, norm) -
         mean_pairs(t.features, t.features, norm);
}

double mmd_gaussian(const SampleSet& s, const SampleSet& t, double bandwidth) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("mmd_gaussian: bandwidth must be positive");
  require_same_dim("mmd_gaussian", s, t);
  if (!canonical_first(s, t)) return mmd_gaussian(t, s, bandwidth);
  const double denom = 2.0 * bandwidth * bandwidth;
  auto k = [denom](const double* a, const double* b, std::size_t d) { return std::exp(-sq_l2(a, b, d) / denom); };
  return mean_pairs(s.features, s.features, k) + mean_pairs(t.features, t.features, k) -
         2.0 * mean_pairs(s.features, t.features, k);
}

double jeffreys_kl(const FiniteDist& p, const FiniteDist& q) {
  require_same_alphabet(p, q);
  double total = 0.0;
  for (std::size_t i = 0; i < p.alphabet_size(); ++i) {
    const double a = p.probs()[i], b = q.probs()[i];
    if (a == 0.0 && b == 0.0) continue;
    if (a == 0.0 || b == 0.0) return std::numeric_limits<double>::infinity();
    total += (a - b) * std::log(a / b);
  }
  return total;
}

double total_variation(const FiniteDist& p, const FiniteDist& q) {
  require_same_alphabet(p, q);
  double s = 0.0;
  for (std::size_t i = 0; i < p.alphabet_size(); ++i) s += std::abs(p.probs()[i] - q.probs()[i]);
  return 0.5 * s;
}

std::string LemmaAuditReport::to_json() const {
  nlohmann::ordered_json j;
  j["trials"] = trials;
  j["frac_lemma1"] = frac_lemma1_holds;
  j["frac_lemma2"] = frac_lemma2_holds;
  j["max_violation"] = max_violation_magnitude;
  j["mdd_pp_mean"] = mdd_pp_mean;
  j["mdd_pp_max"] = mdd_pp_max;
  return j.dump(2) + "\n";
}

LemmaAuditReport lemma_audit(std::int64_t trials, std::size_t alphabet_size, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("lemma_audit: trials must be at least 1");
  if (alphabet_size < 2 || alphabet_size > 16) {
    throw std::invalid_argument("lemma_audit: alphabet size must lie in [2, 16], got " + std::to_string(alphabet_size));
  }
  const std::size_t k = alphabet_size;
  Rng rng(seed);
  std::vector<std::size_t> all(k);
  for (std::size_t i = 0; i < k; ++i) all[i] = i;

  auto sparse_support = [&] {
    std::vector<std::size_t> idx = all;
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(1 + rng.below(k));
    std::sort(idx.begin(), idx.end());
    return idx;
  };

  LemmaAuditReport r;
  r.trials = trials;
  r.min_mdd = std::numeric_limits<double>::infinity();
  r.mdd_pp_min = std::numeric_limits<double>::infinity();
  std::int64_t holds1 = 0, holds2 = 0;
  double pp_sum = 0.0;

  for (std::int64_t t = 0; t < trials; ++t) {
    std::vector<double> pp, qq;
    bool coincident_point_mass = false;
    switch (t % 4) {
      case 0: {
        pp = qq = point_probs(k, rng.below(k));
        coincident_point_mass = true;
        break;
      }
      case 1:
        pp = point_probs(k, rng.below(k));
        qq = point_probs(k, rng.below(k));
        coincident_point_mass = pp == qq;
        break;
      case 2:
        pp = dirichlet(rng, k, all);
        qq = dirichlet(rng, k, all);
        break;
      default: {
        const auto sp = sparse_support();
        const auto sq = sparse_support();
        pp = dirichlet(rng, k, sp);
        qq = dirichlet(rng, k, sq);
        break;
      }
    }
    const FiniteDist p = FiniteDist::one_hot(pp);
    const FiniteDist q = FiniteDist::one_hot(qq);
    const double mdd = mdd_population(p, q);
    const double jeff = jeffreys_kl(p, q);
    const double tv = total_variation(p, q);
    const double tv_bound = 4.0 * tv * tv;

    r.min_mdd = std::min(r.min_mdd, mdd);
    if (coincident_point_mass) {
      ++r.point_mass_trials;
      r.point_mass_max_mdd = std::max(r.point_mass_max_mdd, mdd);
    }
    if (mdd <= jeff) ++holds1;
    else r.max_violation_magnitude = std::max(r.max_violation_magnitude, mdd - jeff);
    if (mdd <= tv_bound) ++holds2;
    else r.max_violation_magnitude = std::max(r.max_violation_magnitude, mdd - tv_bound);

    const FiniteDist same = FiniteDist::one_hot(dirichlet(rng, k, all));
    const double mdd_pp = mdd_population(same, same);
    pp_sum += mdd_pp;
    r.mdd_pp_max = std::max(r.mdd_pp_max, mdd_pp);
    r.mdd_pp_min = std::min(r.mdd_pp_min, mdd_pp);
    if (mdd_pp > 0.0) ++r.mdd_pp_positive;
  }
  const double n = static_cast<double>(trials);
  r.frac_lemma1_holds = static_cast<double>(holds1) / n;
  r.frac_lemma2_holds = static_cast<double>(holds2) / n;
  r.mdd_pp_mean = pp_sum / n;
  return r;
}

}  // namespace atm
