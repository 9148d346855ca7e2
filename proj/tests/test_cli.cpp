#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>

#include "atm/io.hpp"
#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "atm_test_cli";

int atm_cli(const std::string& args, const std::string& log = "cli.log") {
  fs::create_directories(kDir);
  const std::string cmd = std::string(ATM_CLI_PATH) + " " + args + " > " + (kDir / log).string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string output(const std::string& log = "cli.log") { return atm::read_text(kDir / log); }

std::string small_config(int epochs, const std::string& out) {
  return R"({"data": {"source": {"n": 40}, "target": {"n": 40}},
             "model": {"hidden": [8], "d_f": 4},
             "train": {"max_epochs": )" +
         std::to_string(epochs) + R"(, "batch_size": 8},
             "analysis": {"seeds": [0, 1], "output_dir": ")" +
         out + R"("}})";
}

std::size_t line_count(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("train") {
  CHECK(atm_cli("train /nonexistent/cfg.json") != 0);
  CHECK(output().find("/nonexistent/cfg.json") != std::string::npos);

  const fs::path out0 = kDir / "train0";
  atm::write_text(kDir / "zero.json", small_config(0, out0.string()));
  REQUIRE(atm_cli("train " + (kDir / "zero.json").string()) == 0);
  CHECK(atm::read_text(out0 / "metrics.csv") ==
        "epoch,cls_loss,dom_loss,mdd_loss,total_loss,source_acc,target_acc,pseudo_acc,mdd_value\n");

  const fs::path out = kDir / "train3";
  atm::write_text(kDir / "three.json", small_config(3, out.string()));
  REQUIRE(atm_cli("train " + (kDir / "three.json").string()) == 0);
  const std::string metrics = atm::read_text(out / "metrics.csv");
  CHECK(line_count(metrics) == 4);
  const auto summary = nlohmann::json::parse(atm::read_text(out / "summary.json"));
  CHECK(summary.at("epochs") == 3);
  CHECK(summary.at("target_acc").get<double>() >= 0.0);
  CHECK(summary.contains("wall_time_s"));
  CHECK(summary.at("config").at("train").at("max_epochs") == 3);
  CHECK(fs::exists(out / "checkpoint.json"));
  CHECK(line_count(atm::read_text(out / "features.csv")) == 81);

  REQUIRE(atm_cli("train " + (kDir / "three.json").string() + " --out " + (kDir / "train3b").string()) == 0);
  CHECK(atm::read_text(kDir / "train3b" / "metrics.csv") == metrics);
  CHECK(atm::read_text(kDir / "train3b" / "features.csv") == atm::read_text(out / "features.csv"));

  atm::write_text(kDir / "typo.json", R"({"train": {"max_epoch": 3}})");
  CHECK(atm_cli("train " + (kDir / "typo.json").string()) == 2);
  CHECK(output().find("train.max_epoch") != std::string::npos);
}

TEST_CASE("audit") {
  const std::string a = (kDir / "a.json").string(), b = (kDir / "b.json").string();
  REQUIRE(atm_cli("audit --trials 1 --alphabet 2 --seed 0 --out " + a) == 0);
  const auto one = nlohmann::json::parse(atm::read_text(a));
  CHECK(one.at("frac_lemma1") == 1.0);
  CHECK(one.at("frac_lemma2") == 1.0);
  CHECK(one.at("mdd_pp_mean").get<double>() > 0.0);

  REQUIRE(atm_cli("audit --trials 200 --alphabet 5 --seed 4 --out " + a) == 0);
  REQUIRE(atm_cli("audit --trials 200 --alphabet 5 --seed 4 --out " + b) == 0);
  CHECK(atm::read_text(a) == atm::read_text(b));

  CHECK(atm_cli("audit --trials 0") != 0);
  CHECK(atm_cli("audit --alphabet 1") != 0);
}

TEST_CASE("ablate and adist") {
  const fs::path out = kDir / "grid";
  atm::write_text(kDir / "grid.json", small_config(2, out.string()));
  REQUIRE(atm_cli("ablate " + (kDir / "grid.json").string()) == 0);
  const std::string csv = atm::read_text(out / "ablation.csv");
  CHECK(line_count(csv) == 1 + 8 * 3);
  CHECK(csv.rfind("setting,term1,term2,term3,seed,target_acc\n", 0) == 0);
  CHECK(fs::exists(out / "ablation" / "T8_seed1.csv"));

  REQUIRE(atm_cli("adist " + (kDir / "grid.json").string()) == 0);
  const auto report = nlohmann::json::parse(atm::read_text(out / "adist.json"));
  REQUIRE(report.at("runs").size() == 2);
  for (const auto& r : report.at("runs")) {
    CHECK(r.at("pre").get<double>() >= 0.0);
    CHECK(r.at("post").get<double>() <= 2.0);
  }
}

TEST_CASE("gendata and print-config") {
  const std::string a = (kDir / "moons_a.csv").string(), b = (kDir / "moons_b.csv").string();
  REQUIRE(atm_cli("gendata --n 50 --noise 0.1 --seed 3 --shift rotation --magnitude 35 --out " + a) == 0);
  REQUIRE(atm_cli("gendata --n 50 --noise 0.1 --seed 3 --shift rotation --magnitude 35 --out " + b) == 0);
  CHECK(atm::read_text(a) == atm::read_text(b));
  CHECK(line_count(atm::read_text(a)) == 50);
  CHECK(atm_cli("gendata --n 51 --out " + a) != 0);

  REQUIRE(atm_cli("print-config", "config.json") == 0);
  const auto printed = nlohmann::json::parse(output("config.json"));
  CHECK(printed.at("train").at("alpha") == 0.01);
  CHECK(printed.at("model").at("d_f") == 16);
  atm::write_text(kDir / "printed.json", output("config.json"));
  REQUIRE(atm_cli("print-config " + (kDir / "printed.json").string(), "again.json") == 0);
  CHECK(output("again.json") == output("config.json"));

  CHECK(atm_cli("") != 0);
  CHECK(atm_cli("frobnicate") != 0);
}
