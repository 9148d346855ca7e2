#include "atm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "atm/errors.hpp"
#include "atm/io.hpp"
#include "atm/rng.hpp"

namespace atm {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

void require_finite(const char* field, double v) {
  if (!std::isfinite(v)) throw ConfigError(std::string("train.") + field + " must be finite");
}

Tensor gather(const Tensor& x, std::span<const std::size_t> idx) {
  const std::size_t d = x.cols();
  std::vector<double> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return Tensor(idx.size(), d, std::move(out));
}

std::vector<int> gather_labels(const std::vector<int>& labels, std::span<const std::size_t> idx) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
  return out;
}

std::string csv_cell(double v) { return std::isnan(v) ? "nan" : format_double(v); }

}  // namespace

void TrainConfig::validate() const {
  require_finite("alpha", alpha);
  require_finite("lambda", lambda);
  require_finite("lr", lr);
  require_finite("momentum", momentum);
  require_finite("weight_decay", weight_decay);
  require_finite("grl_coeff", grl_coeff);
  if (alpha < 0.0) throw ConfigError("train.alpha must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (grl_coeff < 0.0) throw ConfigError("train.grl_coeff must be >= 0");
  if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("train.batch_size must be even and >= 2");
  if (max_epochs < 0) throw ConfigError("train.max_epochs must be >= 0");
  if (lr_decay) {
    require_finite("lr_decay.gamma", lr_decay->gamma);
    require_finite("lr_decay.beta", lr_decay->beta);
    if (lr_decay->gamma < 0.0) throw ConfigError("train.lr_decay.gamma must be >= 0");
  }
}

const char* MetricsLog::header() {
  return "epoch,cls_loss,dom_loss,mdd_loss,total_loss,source_acc,target_acc,pseudo_acc,mdd_value";
}

std::string MetricsLog::to_csv() const {
  std::string out = header();
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.epoch);
    for (double v : {r.cls_loss, r.dom_loss, r.mdd_loss, r.total_loss, r.source_acc, r.target_acc, r.pseudo_acc,
                     r.mdd_value}) {
      out += ',';
      out += csv_cell(v);
    }
    out += '\n';
  }
  return out;
}

void MetricsLog::write_csv(const std::filesystem::path& path) const { write_text(path, to_csv()); }

MetricsLog MetricsLog::parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header()) throw FormatError("metrics csv: unexpected header");
  MetricsLog log;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw FormatError("metrics csv: row " + std::to_string(row) + " has " +
                                             std::to_string(cells.size()) + " cells, expected 9");
    try {
      EpochMetrics m;
      m.epoch = std::stoll(cells[0]);
      double* fields[] = {&m.cls_loss, &m.dom_loss, &m.mdd_loss, &m.total_loss, &m.source_acc,
                          &m.target_acc, &m.pseudo_acc, &m.mdd_value};
      for (std::size_t i = 0; i < 8; ++i) *fields[i] = cells[i + 1] == "nan" ? kNan : std::stod(cells[i + 1]);
      log.rows.push_back(m);
    } catch (const std::logic_error&) {
      throw FormatError("metrics csv: row " + std::to_string(row) + " is not numeric");
    }
  }
  return log;
}

HalfHalfSampler::HalfHalfSampler(std::size_t source_size, std::size_t target_size, std::size_t n_b,
                                 std::uint64_t seed, std::int64_t epoch)
    : n_b_(n_b) {
  if (n_b == 0) throw std::invalid_argument("half_half_sampler: n_b must be positive");
  if (source_size == 0 || target_size == 0) throw EmptyReductionError("half_half_sampler: empty domain");
  num_batches_ = (std::max(source_size, target_size) + n_b - 1) / n_b;
  const std::uint64_t base = Rng::mix(seed) ^ Rng::mix(static_cast<std::uint64_t>(epoch) + 0x51ed27ULL);
  source_order_.resize(source_size);
  target_order_.resize(target_size);
  std::iota(source_order_.begin(), source_order_.end(), std::size_t{0});
  std::iota(target_order_.begin(), target_order_.end(), std::size_t{0});
  Rng source_rng(base);
  Rng target_rng(base + 1);
  source_rng.shuffle(std::span<std::size_t>(source_order_));
  target_rng.shuffle(std::span<std::size_t>(target_order_));
}

BatchIndices HalfHalfSampler::next() {
  if (done()) throw std::out_of_range("half_half_sampler: epoch exhausted");
  BatchIndices b;
  b.source.resize(n_b_);
  b.target.resize(n_b_);
  for (std::size_t i = 0; i < n_b_; ++i) {
    const std::size_t k = next_ * n_b_ + i;
    b.source[i] = source_order_[k % source_order_.size()];
    b.target[i] = target_order_[k % target_order_.size()];
  }
  ++next_;
  return b;
}

std::vector<BatchIndices> half_half_sampler(const SampleSet& source, const SampleSet& target, std::size_t n_b,
                                            std::uint64_t seed, std::int64_t epoch) {
  HalfHalfSampler sampler(source.size(), target.size(), n_b, seed, epoch);
  std::vector<BatchIndices> out;
  out.reserve(sampler.num_batches());
  while (!sampler.done()) out.push_back(sampler.next());
  return out;
}

std::vector<int> pseudo_label(const AtmModel& model, const Tensor& xt) {
  return argmax_rows(predict(model, forward_features(model, xt.detach())));
}

void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr,
                double momentum, double weight_decay) {
  if (grad.size() != param.size() || velocity.size() != param.size()) {
    throw DimensionError("sgd_update: param has " + std::to_string(param.size()) + " entries, grad " +
                         std::to_string(grad.size()) + ", velocity " + std::to_string(velocity.size()));
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

Sgd::Sgd(const AtmModel& model) {
  for (const auto& p : model.parameters()) velocity_.emplace_back(p.tensor.size(), 0.0);
}

void Sgd::step(const AtmModel& model, double lr, double momentum, double weight_decay) {
  auto params = model.parameters();
  if (params.size() != velocity_.size()) throw DimensionError("sgd: optimizer built for a different model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = params[i].tensor;
    if (!t.has_grad()) continue;
    sgd_update(t.mutable_data(), t.grad(), velocity_[i], lr, momentum, weight_decay);
  }
}

Schedule schedule_at(const TrainConfig& config, double progress) {
  Schedule s;
  s.lr = config.lr;
  if (config.lr_decay) s.lr *= std::pow(1.0 + config.lr_decay->gamma * progress, -config.lr_decay->beta);
  s.grl_coeff = config.grl_coeff;
  if (config.grl_ramp) s.grl_coeff *= 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0;
  return s;
}

StepResult step(AtmModel& model, Sgd& optimizer, const Tensor& xs, std::span<const int> ys, const Tensor& xt,
                const TrainConfig& config, const Schedule& schedule) {
  model.grl_coeff = schedule.grl_coeff;
  const AdvLossParts parts = adversarial_loss(model, xs, ys, xt, config.lambda);

  StepResult r;
  r.pseudo_labels = argmax_rows(parts.target_probs);
  const MddTerms terms = mdd_batch_terms(parts.source_features, parts.target_features, ys, r.pseudo_labels);
  const Tensor* term[] = {&terms.cross, &terms.source_intra, &terms.target_intra};
  Tensor mdd = Tensor::scalar(0.0);
  for (std::size_t k = 0; k < 3; ++k) {
    r.mdd_value += term[k]->item();
    if (config.term_mask[k]) mdd = add(mdd, *term[k]);
  }

  Tensor objective = parts.objective;
  if (config.alpha != 0.0) objective = add(objective, scale(mdd, config.alpha));

  r.cls_loss = parts.cls_loss;
  r.dom_loss = parts.dom_loss;
  r.mdd_loss = mdd.item();
  r.total_loss = r.cls_loss + config.lambda * r.dom_loss + config.alpha * r.mdd_loss;

  model.zero_grads();
  backward(objective);
  optimizer.step(model, schedule.lr, config.momentum, config.weight_decay);
  model.zero_grads();
  return r;
}

double accuracy(const AtmModel& model, const SampleSet& s) {
  if (!s.has_labels()) throw std::invalid_argument("accuracy: sample set has no labels");
  if (s.size() == 0) throw EmptyReductionError("accuracy: empty sample set");
  const auto pred = predict_labels(model, s.features.detach());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == (*s.labels)[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

TrainResult run(const AtmModel& initial, const SampleSet& source, const SampleSet& target,
                const TrainConfig& config) {
  config.validate();
  source.validate();
  target.validate();
  if (!source.has_labels()) throw std::invalid_argument("run: source set needs labels");
  if (source.dim() != initial.input_dim() || target.dim() != initial.input_dim()) {
    throw DimensionError("run: model expects " + std::to_string(initial.input_dim()) + " input features, data has " +
                         std::to_string(source.dim()) + " (source) and " + std::to_string(target.dim()) +
                         " (target)");
  }

  TrainResult result{initial, {}};
  AtmModel& model = result.model;
  Sgd optimizer(model);
  const std::size_t n_b = config.per_domain_batch();
  const std::size_t per_epoch = (std::max(source.size(), target.size()) + n_b - 1) / n_b;
  const double total_steps = static_cast<double>(per_epoch) * static_cast<double>(config.max_epochs);
  const bool labeled_target = target.has_labels();
  std::int64_t flat_epochs = 0;
  std::size_t global_step = 0;

  for (std::int64_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    HalfHalfSampler sampler(source.size(), target.size(), n_b, config.seed, epoch);
    EpochMetrics m;
    m.epoch = epoch;
    std::size_t pseudo_hits = 0, pseudo_seen = 0, steps = 0;
    while (!sampler.done()) {
      const BatchIndices b = sampler.next();
      const Tensor xs = gather(source.features, b.source);
      const Tensor xt = gather(target.features, b.target);
      const auto ys = gather_labels(*source.labels, b.source);
      StepResult r;
      try {
        r = step(model, optimizer, xs, ys, xt, config,
                 schedule_at(config, static_cast<double>(global_step) / total_steps));
      } catch (const NumericError& e) {
        throw NumericError("numeric failure at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(steps + 1) + ": " + e.what());
      }
      if (!std::isfinite(r.total_loss)) {
        throw NumericError("numeric failure at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(steps + 1) + ": total loss is not finite");
      }
      m.cls_loss += r.cls_loss;
      m.dom_loss += r.dom_loss;
      m.mdd_loss += r.mdd_loss;
      m.total_loss += r.total_loss;
      m.mdd_value += r.mdd_value;
      if (labeled_target) {
        for (std::size_t i = 0; i < n_b; ++i) pseudo_hits += r.pseudo_labels[i] == (*target.labels)[b.target[i]];
        pseudo_seen += n_b;
      }
      ++steps;
      ++global_step;
    }
    const double inv = 1.0 / static_cast<double>(steps);
    m.cls_loss *= inv;
    m.dom_loss *= inv;
    m.mdd_loss *= inv;
    m.total_loss *= inv;
    m.mdd_value *= inv;
    m.source_acc = accuracy(model, source);
    m.target_acc = labeled_target ? accuracy(model, target) : kNan;
    m.pseudo_acc = labeled_target ? static_cast<double>(pseudo_hits) / static_cast<double>(pseudo_seen) : kNan;

    if (!result.log.rows.empty() && std::abs(m.total_loss - result.log.rows.back().total_loss) < 1e-6) {
      ++flat_epochs;
    } else {
      flat_epochs = 0;
    }
    result.log.rows.push_back(m);
    if (config.early_stop && flat_epochs >= 10) break;
  }
  model.grl_coeff = schedule_at(config, 1.0).grl_coeff;
  return result;
}

}  // namespace atm
