#include "atm/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "atm/errors.hpp"
#include "atm/io.hpp"
#include "json.hpp"

namespace atm {

namespace {

using json = nlohmann::ordered_json;

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("config: " + where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!ok.count(key)) throw ConfigError("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

std::string path_of(const std::string& where, const char* key) { return where.empty() ? key : where + "." + key; }

template <typename T>
void read(const json& obj, const std::string& where, const char* key, T& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  const std::string at = path_of(where, key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError("config: " + at + " must be a boolean");
    out = v.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError("config: " + at + " must be a string");
    out = v.get<std::string>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError("config: " + at + " must be a number");
    out = v.get<T>();
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!v.is_number_unsigned()) throw ConfigError("config: " + at + " must be a non-negative integer");
    out = v.get<T>();
  } else {
    if (!v.is_number_integer()) throw ConfigError("config: " + at + " must be an integer");
    out = v.get<T>();
  }
}

template <typename T>
void read_list(const json& obj, const std::string& where, const char* key, std::vector<T>& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  const std::string at = path_of(where, key);
  if (!v.is_array()) throw ConfigError("config: " + at + " must be an array");
  std::vector<T> values;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const bool ok = std::is_floating_point_v<T> ? v[i].is_number() : v[i].is_number_unsigned();
    if (!ok) throw ConfigError("config: " + at + "[" + std::to_string(i) + "] has the wrong type");
    values.push_back(v[i].get<T>());
  }
  out = std::move(values);
}

DataSource parse_source(const json& j, const std::string& where, DataSource s) {
  check_keys(j, where, {"kind", "n", "noise", "seed", "path", "images", "labels"});
  read(j, where, "kind", s.kind);
  read(j, where, "n", s.n);
  read(j, where, "noise", s.noise);
  read(j, where, "seed", s.seed);
  read(j, where, "path", s.path);
  read(j, where, "images", s.images);
  read(j, where, "labels", s.labels);
  return s;
}

json source_json(const DataSource& s) {
  json j;
  j["kind"] = s.kind;
  if (s.kind == "two_moons") {
    j["n"] = s.n;
    j["noise"] = s.noise;
    j["seed"] = s.seed;
  } else if (s.kind == "csv") {
    j["path"] = s.path;
  } else {
    j["images"] = s.images;
    j["labels"] = s.labels;
  }
  return j;
}

void validate_source(const DataSource& s, const std::string& where) {
  if (s.kind == "two_moons") {
    if (s.n < 2 || s.n % 2 != 0) throw ConfigError("config: " + where + ".n must be even and >= 2");
    if (!(s.noise >= 0.0) || !std::isfinite(s.noise)) throw ConfigError("config: " + where + ".noise must be >= 0");
  } else if (s.kind == "csv") {
    if (s.path.empty()) throw ConfigError("config: " + where + ".path is required for csv data");
  } else if (s.kind == "idx") {
    if (s.images.empty() || s.labels.empty()) {
      throw ConfigError("config: " + where + ".images and " + where + ".labels are required for idx data");
    }
  } else {
    throw ConfigError("config: " + where + ".kind must be two_moons, csv or idx, got '" + s.kind + "'");
  }
}

SampleSet load_source(const DataSource& s, Domain domain) {
  SampleSet out;
  if (s.kind == "two_moons") {
    out = gen_two_moons(s.n, s.noise, s.seed);
  } else if (s.kind == "csv") {
    out = load_csv(s.path, domain);
  } else {
    out = load_idx(s.images, s.labels, domain);
  }
  out.domain = domain;
  return out;
}

}  // namespace

ModelSpec ModelConfig::spec(std::size_t input_dim) const {
  MlpSpec mlp;
  mlp.layer_widths.push_back(input_dim);
  mlp.layer_widths.insert(mlp.layer_widths.end(), hidden.begin(), hidden.end());
  mlp.layer_widths.push_back(d_f);
  return ModelSpec{mlp, num_classes, disc_hidden};
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  c.data.source.seed = 0;
  c.data.target.seed = 1;
  c.data.shift = ShiftSpec{ShiftKind::rotation, 35.0, 0.0, {}};
  c.train.lambda = 0.5;
  c.train.lr = 0.03;
  c.train.lr_decay = LrDecay{10.0, 0.75};
  c.train.max_epochs = 300;
  return c;
}

void ExperimentConfig::validate() const {
  validate_source(data.source, "data.source");
  validate_source(data.target, "data.target");
  if (data.shift) {
    try {
      data.shift->validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: data.shift: ") + e.what());
    }
  }
  if (model.d_f == 0) throw ConfigError("config: model.d_f must be positive");
  if (model.num_classes < 2) throw ConfigError("config: model.num_classes must be >= 2");
  if (model.disc_hidden == 0) throw ConfigError("config: model.disc_hidden must be positive");
  if (std::find(model.hidden.begin(), model.hidden.end(), std::size_t{0}) != model.hidden.end()) {
    throw ConfigError("config: model.hidden widths must be positive");
  }
  train.validate();
  if (analysis.seeds.empty()) throw ConfigError("config: analysis.seeds must not be empty");
  if (analysis.output_dir.empty()) throw ConfigError("config: analysis.output_dir must not be empty");
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig c = defaults();
  check_keys(root, "", {"data", "model", "train", "analysis"});

  if (root.contains("data")) {
    const json& d = root.at("data");
    check_keys(d, "data", {"source", "target", "shift", "shift_seed", "standardize"});
    if (d.contains("source")) c.data.source = parse_source(d.at("source"), "data.source", c.data.source);
    if (d.contains("target")) c.data.target = parse_source(d.at("target"), "data.target", c.data.target);
    if (d.contains("shift")) {
      const json& s = d.at("shift");
      if (s.is_null()) {
        c.data.shift.reset();
      } else {
        check_keys(s, "data.shift", {"kind", "magnitude", "noise", "direction"});
        ShiftSpec spec = c.data.shift.value_or(ShiftSpec{});
        std::string kind = to_string(spec.kind);
        read(s, "data.shift", "kind", kind);
        try {
          spec.kind = parse_shift_kind(kind);
        } catch (const std::exception& e) {
          throw ConfigError(std::string("config: data.shift.kind: ") + e.what());
        }
        read(s, "data.shift", "magnitude", spec.magnitude);
        read(s, "data.shift", "noise", spec.noise);
        read_list(s, "data.shift", "direction", spec.direction);
        c.data.shift = spec;
      }
    }
    read(d, "data", "shift_seed", c.data.shift_seed);
    read(d, "data", "standardize", c.data.standardize);
  }

  if (root.contains("model")) {
    const json& m = root.at("model");
    check_keys(m, "model", {"hidden", "d_f", "num_classes", "disc_hidden"});
    read_list(m, "model", "hidden", c.model.hidden);
    read(m, "model", "d_f", c.model.d_f);
    read(m, "model", "num_classes", c.model.num_classes);
    read(m, "model", "disc_hidden", c.model.disc_hidden);
  }

  if (root.contains("train")) {
    const json& t = root.at("train");
    check_keys(t, "train", {"alpha", "lambda", "lr", "momentum", "weight_decay", "batch_size", "max_epochs", "seed",
                            "term_mask", "grl_ramp", "lr_decay", "grl_coeff", "early_stop"});
    TrainConfig& tc = c.train;
    read(t, "train", "alpha", tc.alpha);
    read(t, "train", "lambda", tc.lambda);
    read(t, "train", "lr", tc.lr);
    read(t, "train", "momentum", tc.momentum);
    read(t, "train", "weight_decay", tc.weight_decay);
    read(t, "train", "batch_size", tc.batch_size);
    read(t, "train", "max_epochs", tc.max_epochs);
    read(t, "train", "seed", tc.seed);
    read(t, "train", "grl_ramp", tc.grl_ramp);
    read(t, "train", "grl_coeff", tc.grl_coeff);
    read(t, "train", "early_stop", tc.early_stop);
    if (t.contains("term_mask")) {
      const json& m = t.at("term_mask");
      if (!m.is_array() || m.size() != 3 || !std::all_of(m.begin(), m.end(), [](const json& b) { return b.is_boolean(); })) {
        throw ConfigError("config: train.term_mask must be an array of 3 booleans");
      }
      for (std::size_t i = 0; i < 3; ++i) tc.term_mask[i] = m[i].get<bool>();
    }
    if (t.contains("lr_decay")) {
      const json& ld = t.at("lr_decay");
      if (ld.is_null()) {
        tc.lr_decay.reset();
      } else {
        check_keys(ld, "train.lr_decay", {"gamma", "beta"});
        LrDecay decay = tc.lr_decay.value_or(LrDecay{});
        read(ld, "train.lr_decay", "gamma", decay.gamma);
        read(ld, "train.lr_decay", "beta", decay.beta);
        tc.lr_decay = decay;
      }
    }
  }

  if (root.contains("analysis")) {
    const json& a = root.at("analysis");
    check_keys(a, "analysis", {"seeds", "output_dir", "export_features"});
    read_list(a, "analysis", "seeds", c.analysis.seeds);
    read(a, "analysis", "output_dir", c.analysis.output_dir);
    read(a, "analysis", "export_features", c.analysis.export_features);
  }

  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const std::exception&) {
    throw ConfigError("config: cannot read " + path.string());
  }
  try {
    return parse(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string ExperimentConfig::to_json() const {
  json root;
  json& d = root["data"];
  d["source"] = source_json(data.source);
  d["target"] = source_json(data.target);
  if (data.shift) {
    d["shift"] = {{"kind", to_string(data.shift->kind)},
                  {"magnitude", data.shift->magnitude},
                  {"noise", data.shift->noise},
                  {"direction", data.shift->direction}};
  } else {
    d["shift"] = nullptr;
  }
  d["shift_seed"] = data.shift_seed;
  d["standardize"] = data.standardize;

  root["model"] = {{"hidden", model.hidden},
                   {"d_f", model.d_f},
                   {"num_classes", model.num_classes},
                   {"disc_hidden", model.disc_hidden}};

  json& t = root["train"];
  t["alpha"] = train.alpha;
  t["lambda"] = train.lambda;
  t["lr"] = train.lr;
  t["momentum"] = train.momentum;
  t["weight_decay"] = train.weight_decay;
  t["batch_size"] = train.batch_size;
  t["max_epochs"] = train.max_epochs;
  t["seed"] = train.seed;
  t["term_mask"] = {train.term_mask[0], train.term_mask[1], train.term_mask[2]};
  t["grl_ramp"] = train.grl_ramp;
  t["grl_coeff"] = train.grl_coeff;
  if (train.lr_decay) {
    t["lr_decay"] = {{"gamma", train.lr_decay->gamma}, {"beta", train.lr_decay->beta}};
  } else {
    t["lr_decay"] = nullptr;
  }
  t["early_stop"] = train.early_stop;

  root["analysis"] = {{"seeds", analysis.seeds},
                      {"output_dir", analysis.output_dir},
                      {"export_features", analysis.export_features}};
  return root.dump(2) + "\n";
}

DomainPair prepare_data(const DataConfig& config) {
  DomainPair out{load_source(config.source, Domain::source), load_source(config.target, Domain::target)};
  if (config.shift) {
    out.target = apply_shift(out.target, *config.shift, config.shift_seed);
    out.target.domain = Domain::target;
  }
  if (out.source.dim() != out.target.dim()) {
    throw DimensionError("prepare_data: source has " + std::to_string(out.source.dim()) + " features, target " +
                         std::to_string(out.target.dim()));
  }
  if (config.standardize) {
    auto [s, stats] = standardize(out.source);
    out.target = standardize(out.target, stats).first;
    out.source = std::move(s);
  }
  return out;
}

}  // namespace atm
