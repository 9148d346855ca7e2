#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "atm/tensor.hpp"

namespace atm {

/// Widths d₀ … d_L of a relu MLP; every layer, including the last, is relu-activated.
struct MlpSpec {
  std::vector<std::size_t> layer_widths;

  void validate() const;
  std::size_t input_dim() const { return layer_widths.front(); }
  std::size_t output_dim() const { return layer_widths.back(); }
};

/// y = x·W + b with W stored in×out.
struct Linear {
  std::string name;
  Tensor weight;
  Tensor bias;

  Tensor forward(const Tensor& x) const;
  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

class AtmModel {
 public:
  /// Glorot-uniform weights and zero biases drawn from `seed`.
  AtmModel(MlpSpec features, std::size_t num_classes, std::size_t disc_hidden, std::uint64_t seed);

  // Copies own fresh parameter storage.
  AtmModel(const AtmModel& other);
  AtmModel& operator=(const AtmModel& other);
  AtmModel(AtmModel&&) noexcept = default;
  AtmModel& operator=(AtmModel&&) noexcept = default;

  std::size_t input_dim() const { return spec_.input_dim(); }
  std::size_t feature_dim() const { return spec_.output_dim(); }
  std::size_t num_classes() const { return classifier_.out_dim(); }
  std::size_t disc_hidden() const { return discriminator_[0].out_dim(); }
  const MlpSpec& spec() const { return spec_; }

  double grl_coeff = 1.0;

  std::vector<Linear>& feature_layers() { return feature_layers_; }
  const std::vector<Linear>& feature_layers() const { return feature_layers_; }
  Linear& classifier() { return classifier_; }
  const Linear& classifier() const { return classifier_; }
  std::vector<Linear>& discriminator() { return discriminator_; }
  const std::vector<Linear>& discriminator() const { return discriminator_; }

  /// Every trainable tensor, in a fixed order: features, classifier, discriminator.
  std::vector<NamedParam> parameters() const;
  void zero_grads() const;

 private:
  MlpSpec spec_;
  std::vector<Linear> feature_layers_;
  Linear classifier_;
  std::vector<Linear> discriminator_;
};

/// Everything needed to build an AtmModel except the seed.
struct ModelSpec {
  MlpSpec features;
  std::size_t num_classes = 2;
  std::size_t disc_hidden = 32;

  AtmModel build(std::uint64_t seed) const { return AtmModel(features, num_classes, disc_hidden, seed); }
};

/// f = F(x).
Tensor forward_features(const AtmModel& model, const Tensor& x);
/// Class probabilities p = softmax(f·W + b).
Tensor predict(const AtmModel& model, const Tensor& f);
/// Discriminator probability that each row of h comes from the source domain, n×1.
Tensor discriminate(const AtmModel& model, const Tensor& h);

/// Row i is the flattened outer product fᵢ ⊗ pᵢ, feature index major.
Tensor multilinear_map(const Tensor& f, const Tensor& p);

/// wᵢ = 1 + exp(−H(pᵢ)), rescaled so the batch mean is 1. Treated as constants.
std::vector<double> entropy_weight(const Tensor& p);
/// The unnormalised weights 1 + exp(−H(pᵢ)).
std::vector<double> entropy_weight_raw(const Tensor& p);

/// Argmax per row; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& p);
std::vector<int> predict_labels(const AtmModel& model, const Tensor& x);

struct AdvLossParts {
  double cls_loss = 0.0;
  double dom_loss = 0.0;
  double total = 0.0;  // cls_loss + lambda · dom_loss
  double lambda = 1.0;

  // The scalar handed to backward: cls − λ·dom. The discriminator descends it
  // (so it ascends dom); the feature side receives the dom gradient reversed.
  Tensor objective;
  Tensor source_features;
  Tensor target_features;
  Tensor source_probs;
  Tensor target_probs;
};

/// Source cross-entropy plus the entropy-conditioned domain term
/// mean wₛ·log D(hₛ) + mean wₜ·log(1 − D(hₜ)), h built from reversed (f, p).
AdvLossParts adversarial_loss(const AtmModel& model, const Tensor& xs, std::span<const int> ys, const Tensor& xt,
                              double lambda);

/// Same as adversarial_loss with caller-supplied per-row weights.
AdvLossParts adversarial_loss_weighted(const AtmModel& model, const Tensor& xs, std::span<const int> ys,
                                       const Tensor& xt, double lambda, std::span<const double> source_weights,
                                       std::span<const double> target_weights);

/// JSON map of layer name → {shape, values}, plus the architecture. Doubles
/// round-trip exactly.
void save_checkpoint(const AtmModel& model, const std::filesystem::path& path);
AtmModel load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_json(const AtmModel& model);
AtmModel checkpoint_from_json(const std::string& text);

}  // namespace atm
