#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "atm/analysis.hpp"
#include "atm/config.hpp"
#include "atm/errors.hpp"
#include "atm/io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kFailure = 1;
constexpr int kUsage = 2;

fs::path output_dir(const atm::ExperimentConfig& config, const std::string& flag) {
  return flag.empty() ? fs::path(config.analysis.output_dir) : fs::path(flag);
}

json metrics_json(const atm::EpochMetrics& m) {
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  return {{"epoch", m.epoch},           {"cls_loss", m.cls_loss},     {"dom_loss", m.dom_loss},
          {"mdd_loss", m.mdd_loss},     {"total_loss", m.total_loss}, {"source_acc", m.source_acc},
          {"target_acc", num(m.target_acc)}, {"pseudo_acc", num(m.pseudo_acc)}, {"mdd_value", m.mdd_value}};
}

atm::TrainResult train_once(const atm::ExperimentConfig& config, const atm::DomainPair& data, std::uint64_t seed) {
  atm::TrainConfig tc = config.train;
  tc.seed = seed;
  const atm::ModelSpec spec = config.model.spec(data.source.dim());
  return atm::run(spec.build(seed), data.source, data.target, tc);
}

int cmd_train(const std::string& config_path, const std::string& out_flag) {
  const auto config = atm::ExperimentConfig::load(config_path);
  const fs::path out = output_dir(config, out_flag);
  const auto data = atm::prepare_data(config.data);

  const auto start = std::chrono::steady_clock::now();
  const auto result = train_once(config, data, config.train.seed);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  result.log.write_csv(out / "metrics.csv");
  atm::save_checkpoint(result.model, out / "checkpoint.json");
  if (config.analysis.export_features) {
    const std::vector<atm::SampleSet> sets{data.source, data.target};
    atm::export_features(result.model, sets, out / "features.csv");
  }

  json summary;
  summary["epochs"] = result.log.rows.size();
  summary["source_acc"] = atm::accuracy(result.model, data.source);
  summary["target_acc"] = data.target.has_labels() ? json(atm::target_accuracy(result.model, data.target)) : json(nullptr);
  summary["final"] = result.log.rows.empty() ? json(nullptr) : metrics_json(result.log.rows.back());
  summary["wall_time_s"] = wall;
  summary["config"] = json::parse(config.to_json());
  atm::write_text(out / "summary.json", summary.dump(2) + "\n");
  std::cout << "trained " << result.log.rows.size() << " epochs, target_acc " << summary["target_acc"].dump()
            << ", outputs in " << out.string() << "\n";
  return 0;
}

int cmd_audit(std::int64_t trials, std::size_t alphabet, std::uint64_t seed, const std::string& out) {
  const auto report = atm::lemma_audit(trials, alphabet, seed);
  const std::string text = report.to_json();
  atm::write_text(out, text);
  std::cout << text;
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_flag) {
  const auto config = atm::ExperimentConfig::load(config_path);
  const fs::path out = output_dir(config, out_flag);
  const auto data = atm::prepare_data(config.data);
  const auto cells = atm::ablation_grid(data.source, data.target, config.model.spec(data.source.dim()), config.train,
                                        config.analysis.seeds);
  int failed = 0;
  for (const auto& cell : cells) {
    for (std::size_t i = 0; i < cell.seeds.size(); ++i) {
      if (!cell.errors[i].empty()) {
        std::cerr << "atm: " << cell.id << " seed " << cell.seeds[i] << " failed: " << cell.errors[i] << "\n";
        ++failed;
        continue;
      }
      cell.logs[i].write_csv(out / "ablation" / (cell.id + "_seed" + std::to_string(cell.seeds[i]) + ".csv"));
    }
  }
  const std::string csv = atm::format_ablation_csv(cells);
  atm::write_text(out / "ablation.csv", csv);
  std::cout << csv;
  return failed == 0 ? 0 : kFailure;
}

int cmd_adist(const std::string& config_path, const std::string& out_flag) {
  const auto config = atm::ExperimentConfig::load(config_path);
  const fs::path out = output_dir(config, out_flag);
  const auto data = atm::prepare_data(config.data);
  json report;
  report["runs"] = json::array();
  double pre_sum = 0.0, post_sum = 0.0;
  for (std::uint64_t seed : config.analysis.seeds) {
    const auto result = train_once(config, data, seed);
    const double pre = atm::a_distance(data.source.features, data.target.features, seed);
    const double post = atm::a_distance(atm::forward_features(result.model, data.source.features),
                                        atm::forward_features(result.model, data.target.features), seed);
    report["runs"].push_back({{"seed", seed}, {"pre", pre}, {"post", post}});
    pre_sum += pre;
    post_sum += post;
  }
  const double n = static_cast<double>(config.analysis.seeds.size());
  report["mean_pre"] = pre_sum / n;
  report["mean_post"] = post_sum / n;
  const std::string text = report.dump(2) + "\n";
  atm::write_text(out / "adist.json", text);
  std::cout << text;
  return 0;
}

struct GendataArgs {
  std::size_t n = 1000;
  double noise = 0.1;
  std::uint64_t seed = 0;
  std::string shift;
  double magnitude = 0.0;
  double shift_noise = 0.0;
  std::uint64_t shift_seed = 0;
  std::string out;
};

int cmd_gendata(const GendataArgs& a) {
  atm::SampleSet s = atm::gen_two_moons(a.n, a.noise, a.seed);
  if (!a.shift.empty()) {
    s = atm::apply_shift(s, atm::ShiftSpec{atm::parse_shift_kind(a.shift), a.magnitude, a.shift_noise, {}},
                         a.shift_seed);
  }
  atm::write_csv(s, a.out);
  return 0;
}

int cmd_print_config(const std::string& config_path) {
  const auto config = config_path.empty() ? atm::ExperimentConfig::defaults() : atm::ExperimentConfig::load(config_path);
  std::cout << config.to_json();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Maximum Density Divergence and Adversarial Tight Match experiments"};
  app.require_subcommand(1);

  std::string config_path, out;
  auto* train = app.add_subcommand("train", "train one model; writes metrics.csv, summary.json, checkpoint.json");
  train->add_option("config", config_path, "experiment config (JSON)")->required();
  train->add_option("--out", out, "output directory (default: analysis.output_dir)");

  std::int64_t trials = 1000;
  std::size_t alphabet = 4;
  std::uint64_t seed = 0;
  std::string audit_out = "audit.json";
  auto* audit = app.add_subcommand("audit", "sample distribution pairs and check the MDD upper bounds");
  audit->add_option("--trials", trials, "number of distribution pairs")->check(CLI::PositiveNumber);
  audit->add_option("--alphabet", alphabet, "alphabet size")->check(CLI::Range(2, 16));
  audit->add_option("--seed", seed, "random seed");
  audit->add_option("--out", audit_out, "report path");

  auto* ablate = app.add_subcommand("ablate", "run every MDD term mask for every seed; writes ablation.csv");
  ablate->add_option("config", config_path, "experiment config (JSON)")->required();
  ablate->add_option("--out", out, "output directory (default: analysis.output_dir)");

  auto* adist = app.add_subcommand("adist", "A-distance on raw inputs and on learned features; writes adist.json");
  adist->add_option("config", config_path, "experiment config (JSON)")->required();
  adist->add_option("--out", out, "output directory (default: analysis.output_dir)");

  GendataArgs gen;
  auto* gendata = app.add_subcommand("gendata", "write a two-moons sample as CSV");
  gendata->add_option("--n", gen.n, "number of points (even)");
  gendata->add_option("--noise", gen.noise, "Gaussian noise standard deviation");
  gendata->add_option("--seed", gen.seed, "random seed");
  gendata->add_option("--shift", gen.shift, "rotation, translation or class-conditional-shift");
  gendata->add_option("--magnitude", gen.magnitude, "degrees for rotation, offset otherwise");
  gendata->add_option("--shift-noise", gen.shift_noise, "jitter added by the shift");
  gendata->add_option("--shift-seed", gen.shift_seed, "seed for the shift jitter");
  gendata->add_option("--out", gen.out, "CSV path")->required();

  auto* print_config = app.add_subcommand("print-config", "print the default (or a loaded) config with all keys");
  print_config->add_option("config", config_path, "config to load and echo");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kUsage;
  }

  try {
    if (*train) return cmd_train(config_path, out);
    if (*audit) return cmd_audit(trials, alphabet, seed, audit_out);
    if (*ablate) return cmd_ablate(config_path, out);
    if (*adist) return cmd_adist(config_path, out);
    if (*gendata) return cmd_gendata(gen);
    if (*print_config) return cmd_print_config(config_path);
  } catch (const atm::ConfigError& e) {
    std::cerr << "atm: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "atm: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
