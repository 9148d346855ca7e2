#include "atm/models.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "atm/errors.hpp"
#include "atm/rng.hpp"
#include "json.hpp"

namespace atm {

namespace {

constexpr double kDiscClamp = 1e-7;

Linear make_linear(std::string name, std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (double& v : w) v = rng.uniform(-limit, limit);
  return Linear{std::move(name), Tensor(in, out, std::move(w), true), Tensor::zeros(1, out, true)};
}

Tensor copy_param(const Tensor& t) {
  return Tensor(t.rows(), t.cols(), std::vector<double>(t.data().begin(), t.data().end()), true);
}

Linear copy_linear(const Linear& l) { return Linear{l.name, copy_param(l.weight), copy_param(l.bias)}; }

void check_width(const char* op, const Tensor& x, std::size_t expected) {
  if (x.cols() != expected) {
    throw DimensionError(std::string(op) + ": expected " + std::to_string(expected) + " columns, got " +
                         x.shape_str());
  }
}

}  // namespace

void MlpSpec::validate() const {
  if (layer_widths.size() < 2) throw std::invalid_argument("MLP spec needs at least an input and an output width");
  for (std::size_t w : layer_widths) {
    if (w < 1) throw std::invalid_argument("MLP layer widths must be at least 1");
  }
}

Tensor Linear::forward(const Tensor& x) const { return add(matmul(x, weight), bias); }

AtmModel::AtmModel(MlpSpec features, std::size_t num_classes, std::size_t disc_hidden, std::uint64_t seed)
    : spec_(std::move(features)) {
  spec_.validate();
  if (num_classes < 1) throw std::invalid_argument("model needs at least one class");
  if (disc_hidden < 1) throw std::invalid_argument("discriminator hidden width must be at least 1");
  Rng rng(seed);
  const auto& w = spec_.layer_widths;
  for (std::size_t i = 0; i + 1 < w.size(); ++i) {
    feature_layers_.push_back(make_linear("features." + std::to_string(i), w[i], w[i + 1], rng));
  }
  classifier_ = make_linear("classifier", feature_dim(), num_classes, rng);
  const std::size_t joint = feature_dim() * num_classes;
  discriminator_.push_back(make_linear("discriminator.0", joint, disc_hidden, rng));
  discriminator_.push_back(make_linear("discriminator.1", disc_hidden, disc_hidden, rng));
  discriminator_.push_back(make_linear("discriminator.2", disc_hidden, 1, rng));
}

AtmModel::AtmModel(const AtmModel& other)
    : grl_coeff(other.grl_coeff), spec_(other.spec_), classifier_(copy_linear(other.classifier_)) {
  for (const auto& l : other.feature_layers_) feature_layers_.push_back(copy_linear(l));
  for (const auto& l : other.discriminator_) discriminator_.push_back(copy_linear(l));
}

AtmModel& AtmModel::operator=(const AtmModel& other) {
  if (this != &other) *this = AtmModel(other);
  return *this;
}

std::vector<NamedParam> AtmModel::parameters() const {
  std::vector<NamedParam> out;
  auto push = [&out](const Linear& l) {
    out.push_back({l.name + ".weight", l.weight});
    out.push_back({l.name + ".bias", l.bias});
  };
  for (const auto& l : feature_layers_) push(l);
  push(classifier_);
  for (const auto& l : discriminator_) push(l);
  return out;
}

void AtmModel::zero_grads() const {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

Tensor forward_features(const AtmModel& model, const Tensor& x) {
  check_width("forward_features", x, model.input_dim());
  Tensor h = x;
  for (const auto& layer : model.feature_layers()) h = relu(layer.forward(h));
  return h;
}

Tensor predict(const AtmModel& model, const Tensor& f) {
  check_width("predict", f, model.feature_dim());
  return softmax_rows(model.classifier().forward(f));
}

Tensor discriminate(const AtmModel& model, const Tensor& h) {
  check_width("discriminate", h, model.feature_dim() * model.num_classes());
  const auto& d = model.discriminator();
  Tensor z = relu(d[0].forward(h));
  z = relu(d[1].forward(z));
  return sigmoid(d[2].forward(z));
}

Tensor multilinear_map(const Tensor& f, const Tensor& p) {
  if (f.rows() != p.rows()) {
    throw DimensionError("multilinear_map: row counts differ, " + f.shape_str() + " vs " + p.shape_str());
  }
  const std::size_t n = f.rows(), df = f.cols(), c = p.cols(), w = df * c;
  std::vector<double> out(n * w);
  const auto fv = f.data();
  const auto pv = p.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < df; ++a)
      for (std::size_t b = 0; b < c; ++b) out[i * w + a * c + b] = fv[i * df + a] * pv[i * c + b];
  return Tensor::make_result("multilinear_map", n, w, std::move(out), {f.node(), p.node()},
                             [n, df, c, w](detail::Node& self) {
                               auto& pf = *self.parents[0];
                               auto& pp = *self.parents[1];
                               for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t a = 0; a < df; ++a)
                                   for (std::size_t b = 0; b < c; ++b) {
                                     const double g = self.grad[i * w + a * c + b];
                                     if (pf.requires_grad) pf.grad[i * df + a] += g * pp.value[i * c + b];
                                     if (pp.requires_grad) pp.grad[i * c + b] += g * pf.value[i * df + a];
                                   }
                             });
}

std::vector<double> entropy_weight_raw(const Tensor& p) {
  const std::size_t n = p.rows(), c = p.cols();
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0, h = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double v = p(i, j);
      total += v;
      if (v > 0.0) h -= v * std::log(v);
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw std::invalid_argument("entropy_weight: row " + std::to_string(i) + " sums to " + std::to_string(total));
    }
    w[i] = 1.0 + std::exp(-h);
  }
  return w;
}

std::vector<double> entropy_weight(const Tensor& p) {
  if (p.rows() == 0) throw EmptyReductionError("entropy_weight: empty batch");
  auto w = entropy_weight_raw(p);
  double total = 0.0;
  for (double v : w) total += v;
  const double scale_by = static_cast<double>(w.size()) / total;
  for (double& v : w) v *= scale_by;
  return w;
}

std::vector<int> argmax_rows(const Tensor& p) {
  std::vector<int> out(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < p.cols(); ++j)
      if (p(i, j) > p(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> predict_labels(const AtmModel& model, const Tensor& x) {
  return argmax_rows(predict(model, forward_features(model, x.detach())));
}

AdvLossParts adversarial_loss_weighted(const AtmModel& model, const Tensor& xs, std::span<const int> ys,
                                       const Tensor& xt, double lambda, std::span<const double> source_weights,
                                       std::span<const double> target_weights) {
  if (xs.rows() == 0 || xt.rows() == 0) throw EmptyReductionError("adversarial_loss: empty batch");
  if (ys.size() != xs.rows()) {
    throw DimensionError("adversarial_loss: " + std::to_string(xs.rows()) + " source rows but " +
                         std::to_string(ys.size()) + " labels");
  }
  if (source_weights.size() != xs.rows() || target_weights.size() != xt.rows()) {
    throw DimensionError("adversarial_loss: weight vectors do not match batch sizes");
  }
  const std::size_t classes = model.num_classes();
  std::vector<std::size_t> cols(ys.size());
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (ys[i] < 0 || static_cast<std::size_t>(ys[i]) >= classes) {
      throw std::out_of_range("adversarial_loss: label " + std::to_string(ys[i]) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
    cols[i] = static_cast<std::size_t>(ys[i]);
  }

  AdvLossParts parts;
  parts.lambda = lambda;
  parts.source_features = forward_features(model, xs);
  parts.target_features = forward_features(model, xt);
  parts.source_probs = predict(model, parts.source_features);
  parts.target_probs = predict(model, parts.target_features);

  const Tensor cls = scale(mean(log(pick(parts.source_probs, cols))), -1.0);

  const double c = model.grl_coeff;
  const Tensor hs = multilinear_map(gradient_reversal(parts.source_features, c),
                                    gradient_reversal(parts.source_probs, c));
  const Tensor ht = multilinear_map(gradient_reversal(parts.target_features, c),
                                    gradient_reversal(parts.target_probs, c));
  const Tensor ds = discriminate(model, hs);
  const Tensor dt = discriminate(model, ht);
  const Tensor ws(xs.rows(), 1, std::vector<double>(source_weights.begin(), source_weights.end()));
  const Tensor wt(xt.rows(), 1, std::vector<double>(target_weights.begin(), target_weights.end()));
  const Tensor log_ds = log(ds, kDiscClamp);
  const Tensor log_not_dt = log(add_scalar(scale(dt, -1.0), 1.0), kDiscClamp);
  const Tensor dom = add(mean(mul(log_ds, ws)), mean(mul(log_not_dt, wt)));

  parts.objective = sub(cls, scale(dom, lambda));
  parts.cls_loss = cls.item();
  parts.dom_loss = dom.item();
  parts.total = parts.cls_loss + lambda * parts.dom_loss;
  return parts;
}

AdvLossParts adversarial_loss(const AtmModel& model, const Tensor& xs, std::span<const int> ys, const Tensor& xt,
                              double lambda) {
  // Weights come from a constant forward pass; they carry no gradient.
  const Tensor ps = predict(model, forward_features(model, xs.detach())).detach();
  const Tensor pt = predict(model, forward_features(model, xt.detach())).detach();
  const auto ws = entropy_weight(ps);
  const auto wt = entropy_weight(pt);
  return adversarial_loss_weighted(model, xs, ys, xt, lambda, ws, wt);
}

std::string checkpoint_json(const AtmModel& model) {
  nlohmann::ordered_json j;
  j["format"] = "atm-checkpoint-v1";
  j["architecture"] = {{"layer_widths", model.spec().layer_widths},
                       {"num_classes", model.num_classes()},
                       {"disc_hidden", model.disc_hidden()},
                       {"grl_coeff", model.grl_coeff}};
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  for (const auto& p : model.parameters()) {
    params[p.name] = {{"shape", {p.tensor.rows(), p.tensor.cols()}},
                      {"values", std::vector<double>(p.tensor.data().begin(), p.tensor.data().end())}};
  }
  j["parameters"] = std::move(params);
  return j.dump() + "\n";
}

AtmModel checkpoint_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "atm-checkpoint-v1") throw FormatError("checkpoint: unknown format tag");
  try {
    const auto& arch = j.at("architecture");
    AtmModel model(MlpSpec{arch.at("layer_widths").get<std::vector<std::size_t>>()},
                   arch.at("num_classes").get<std::size_t>(), arch.at("disc_hidden").get<std::size_t>(), 0);
    model.grl_coeff = arch.at("grl_coeff").get<double>();
    const auto& params = j.at("parameters");
    for (auto& p : model.parameters()) {
      const auto& entry = params.at(p.name);
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto values = entry.at("values").get<std::vector<double>>();
      if (shape.size() != 2 || shape[0] != p.tensor.rows() || shape[1] != p.tensor.cols() ||
          values.size() != p.tensor.size()) {
        throw FormatError("checkpoint: parameter " + p.name + " has the wrong shape");
      }
      std::copy(values.begin(), values.end(), p.tensor.mutable_data().begin());
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const AtmModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << checkpoint_json(model);
}

AtmModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace atm
