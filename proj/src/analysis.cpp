#include "atm/analysis.hpp"

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

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

Split split_half(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t half = n / 2;
  return {std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half)),
          std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(half), order.end())};
}

struct Design {
  std::vector<double> x;  // row-major, d columns
  std::vector<double> y;  // 1 for source, 0 for target
};

void append_rows(Design& out, const Tensor& t, std::span<const std::size_t> rows, double label) {
  for (std::size_t r : rows) {
    for (std::size_t c = 0; c < t.cols(); ++c) out.x.push_back(t(r, c));
    out.y.push_back(label);
  }
}

double sigmoid_scalar(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

const char* kSettingNames[8] = {"T1", "T2", "T3", "T4", "T5", "T6", "T7", "T8"};

}  // namespace

double target_accuracy(const AtmModel& model, const SampleSet& target) {
  if (!target.has_labels()) throw std::invalid_argument("target_accuracy: target set has no labels");
  return accuracy(model, target);
}

double a_distance(const Tensor& source, const Tensor& target, std::uint64_t seed, const ADistanceOptions& options) {
  if (source.cols() != target.cols()) {
    throw DimensionError("a_distance: source has " + std::to_string(source.cols()) + " columns, target " +
                         std::to_string(target.cols()));
  }
  if (source.rows() < 4 || target.rows() < 4) {
    throw std::invalid_argument("a_distance: need at least 4 samples per domain, got " +
                                std::to_string(source.rows()) + " and " + std::to_string(target.rows()));
  }
  const std::size_t d = source.cols();
  // Both domains split from the same stream state.
  Rng source_rng(seed);
  Rng target_rng(seed);
  const Split s = split_half(source.rows(), source_rng);
  const Split t = split_half(target.rows(), target_rng);

  Design train, test;
  append_rows(train, source, s.train, 1.0);
  append_rows(train, target, t.train, 0.0);
  append_rows(test, source, s.test, 1.0);
  append_rows(test, target, t.test, 0.0);
  const std::size_t n = train.y.size();

  // Standardize with training statistics.
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) mu[c] += train.x[i * d + c];
  }
  for (double& m : mu) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) sd[c] += (train.x[i * d + c] - mu[c]) * (train.x[i * d + c] - mu[c]);
  }
  for (double& v : sd) v = std::sqrt(v / static_cast<double>(n));
  for (Design* set : {&train, &test}) {
    for (std::size_t i = 0; i < set->y.size(); ++i) {
      for (std::size_t c = 0; c < d; ++c) {
        double& v = set->x[i * d + c];
        v -= mu[c];
        if (sd[c] > 0.0) v /= sd[c];
      }
    }
  }

  std::vector<double> w(d, 0.0), grad(d);
  double b = 0.0;
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double z = b;
      for (std::size_t c = 0; c < d; ++c) z += w[c] * train.x[i * d + c];
      const double r = sigmoid_scalar(z) - train.y[i];
      for (std::size_t c = 0; c < d; ++c) grad[c] += r * train.x[i * d + c];
      gb += r;
    }
    double worst = std::abs(gb / static_cast<double>(n));
    for (std::size_t c = 0; c < d; ++c) {
      grad[c] = grad[c] / static_cast<double>(n) + options.l2 * w[c];
      worst = std::max(worst, std::abs(grad[c]));
    }
    if (worst < options.tolerance) break;
    for (std::size_t c = 0; c < d; ++c) w[c] -= options.learning_rate * grad[c];
    b -= options.learning_rate * gb / static_cast<double>(n);
  }

  std::size_t errors = 0;
  for (std::size_t i = 0; i < test.y.size(); ++i) {
    double z = b;
    for (std::size_t c = 0; c < d; ++c) z += w[c] * test.x[i * d + c];
    errors += (z > 0.0 ? 1.0 : 0.0) != test.y[i];
  }
  const double eps = static_cast<double>(errors) / static_cast<double>(test.y.size());
  return std::clamp(2.0 * (1.0 - 2.0 * eps), 0.0, 2.0);
}

const std::array<std::array<bool, 3>, 8>& ablation_masks() {
  static const std::array<std::array<bool, 3>, 8> masks{{{false, false, false},
                                                         {true, false, false},
                                                         {false, true, false},
                                                         {false, false, true},
                                                         {true, true, false},
                                                         {true, false, true},
                                                         {false, true, true},
                                                         {true, true, true}}};
  return masks;
}

std::vector<AblationCell> ablation_grid(const SampleSet& source, const SampleSet& target, const ModelSpec& model,
                                        const TrainConfig& base_config, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw std::invalid_argument("ablation_grid: no seeds");
  if (!target.has_labels()) throw std::invalid_argument("ablation_grid: target labels are needed for scoring");
  std::vector<AblationCell> cells;
  for (std::size_t k = 0; k < 8; ++k) {
    AblationCell cell;
    cell.id = kSettingNames[k];
    cell.term_mask = ablation_masks()[k];
    double sum = 0.0;
    std::size_t ok = 0;
    for (std::uint64_t seed : seeds) {
      TrainConfig config = base_config;
      config.term_mask = cell.term_mask;
      config.seed = seed;
      cell.seeds.push_back(seed);
      try {
        TrainResult r = run(model.build(seed), source, target, config);
        const double acc = target_accuracy(r.model, target);
        cell.accs.push_back(acc);
        cell.errors.emplace_back();
        cell.logs.push_back(std::move(r.log));
        sum += acc;
        ++ok;
      } catch (const std::exception& e) {
        cell.accs.push_back(kNan);
        cell.errors.emplace_back(e.what());
        cell.logs.emplace_back();
      }
    }
    cell.mean_acc = ok == 0 ? kNan : sum / static_cast<double>(ok);
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::string format_ablation_csv(const std::vector<AblationCell>& cells) {
  std::string out = "setting,term1,term2,term3,seed,target_acc\n";
  auto cell_prefix = [](const AblationCell& c) {
    return c.id + "," + (c.term_mask[0] ? "1" : "0") + "," + (c.term_mask[1] ? "1" : "0") + "," +
           (c.term_mask[2] ? "1" : "0") + ",";
  };
  auto num = [](double v) { return std::isnan(v) ? std::string("nan") : format_double(v); };
  for (const auto& c : cells) {
    for (std::size_t i = 0; i < c.seeds.size(); ++i) {
      out += cell_prefix(c) + std::to_string(c.seeds[i]) + "," + num(c.accs[i]) + "\n";
    }
    out += cell_prefix(c) + "mean," + num(c.mean_acc) + "\n";
  }
  return out;
}

std::vector<std::pair<std::int64_t, double>> pseudo_accuracy_curve(const MetricsLog& log) {
  if (log.rows.empty()) throw EmptyReductionError("pseudo_accuracy_curve: empty log");
  std::vector<std::pair<std::int64_t, double>> out;
  out.reserve(log.rows.size());
  for (const auto& r : log.rows) out.emplace_back(r.epoch, r.pseudo_acc);
  return out;
}

FeatureTable extract_features(const AtmModel& model, std::span<const SampleSet> sets) {
  if (sets.empty()) throw std::invalid_argument("extract_features: no sample sets");
  FeatureTable table;
  std::vector<double> values;
  std::size_t rows = 0;
  for (const auto& s : sets) {
    const Tensor f = forward_features(model, s.features.detach());
    values.insert(values.end(), f.data().begin(), f.data().end());
    rows += f.rows();
    for (std::size_t i = 0; i < s.size(); ++i) {
      table.labels.push_back(s.has_labels() ? (*s.labels)[i] : -1);
      table.domains.push_back(s.domain);
    }
  }
  table.features = Tensor(rows, model.feature_dim(), std::move(values));
  return table;
}

std::string format_features_csv(const FeatureTable& table) {
  std::string out;
  for (std::size_t c = 0; c < table.features.cols(); ++c) out += "f" + std::to_string(c) + ",";
  out += "label,domain_tag\n";
  for (std::size_t r = 0; r < table.features.rows(); ++r) {
    for (std::size_t c = 0; c < table.features.cols(); ++c) out += format_double(table.features(r, c)) + ",";
    out += std::to_string(table.labels[r]) + "," + to_string(table.domains[r]) + "\n";
  }
  return out;
}

FeatureTable parse_features_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("features csv: missing header");
  const std::size_t header_cells = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (header_cells < 3) throw FormatError("features csv: header has too few columns");
  const std::size_t d = header_cells - 2;
  FeatureTable table;
  std::vector<double> values;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != d + 2) {
      throw FormatError("features csv: row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                        " cells, expected " + std::to_string(d + 2));
    }
    try {
      for (std::size_t c = 0; c < d; ++c) values.push_back(std::stod(cells[c]));
      table.labels.push_back(std::stoi(cells[d]));
    } catch (const std::logic_error&) {
      throw FormatError("features csv: row " + std::to_string(row) + " is not numeric");
    }
    if (cells[d + 1] == "source") {
      table.domains.push_back(Domain::source);
    } else if (cells[d + 1] == "target") {
      table.domains.push_back(Domain::target);
    } else {
      throw FormatError("features csv: row " + std::to_string(row) + " has unknown domain tag '" + cells[d + 1] + "'");
    }
  }
  table.features = Tensor(table.labels.size(), d, std::move(values));
  return table;
}

void export_features(const AtmModel& model, std::span<const SampleSet> sets, const std::filesystem::path& path) {
  write_text(path, format_features_csv(extract_features(model, sets)));
}

FeatureTable load_features(const std::filesystem::path& path) { return parse_features_csv(read_text(path)); }

}  // namespace atm
