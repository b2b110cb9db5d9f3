#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "qnbm/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = qnbm::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("qnbm_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const auto p = dir / "config.in.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

json small_run(const fs::path& csv) {
  return {{"data", {{"csv", csv.string()}}},
          {"model", {{"hidden_units", 6}, {"basis_count", 6}, {"rank", 2}, {"levels", {0.05, 0.25, 0.5, 0.75, 0.95}}}},
          {"windows", {{"price_lag_days", {1}}, {"exogenous", {"load_fcst"}}}},
          {"train", {{"max_epochs", 3}, {"patience", 3}, {"learning_rate", 0.01}}}};
}

}  // namespace

TEST_CASE("synth writes whole days and is reproducible") {
  const auto dir = scratch("synth");
  const auto a = run({"synth", "--days", "30", "--seed", "5", "--out", (dir / "a").string()});
  REQUIRE(a.code == 0);
  const auto b = run({"synth", "--days", "30", "--seed", "5", "--out", (dir / "b").string()});
  REQUIRE(b.code == 0);
  const std::string csv = slurp(dir / "a" / "synth.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 30 * 24 + 1);
  CHECK(csv == slurp(dir / "b" / "synth.csv"));
  const auto manifest = json::parse(slurp(dir / "a" / "manifest.json"));
  CHECK(manifest.at("command") == "synth");
  CHECK(manifest.contains("config_hash"));
  CHECK(run({"synth", "--days", "30", "--seed", "6", "--out", (dir / "c").string()}).code == 0);
  CHECK(slurp(dir / "c" / "synth.csv") != csv);
  fs::remove_all(dir);
}

TEST_CASE("configuration and usage errors exit with 2") {
  const auto dir = scratch("usage");
  auto missing = run({"train", "--config", (dir / "nope.json").string()});
  CHECK(missing.code == 2);
  const auto err = json::parse(missing.err);
  CHECK(err.contains("error"));
  CHECK(err.contains("message"));

  const auto unknown = write_config(dir, {{"trian", {{"max_epochs", 1}}}});
  const auto u = run({"train", "--config", unknown.string()});
  CHECK(u.code == 2);
  CHECK(u.err.find("trian") != std::string::npos);

  CHECK(run({"bogus"}).code == 2);
  CHECK(run({"synth", "--days", "10", "--out", dir.string()}).code == 2);
  CHECK(run({"train", "--model", "lstm"}).code == 2);
  fs::remove_all(dir);
}

TEST_CASE("bad data exits with 3") {
  const auto dir = scratch("data");
  std::ofstream(dir / "bad.csv") << "when,price\n2021-01-01T00:00Z,1\n";
  const auto r = run({"train", "--data", (dir / "bad.csv").string(), "--out", (dir / "out").string()});
  CHECK(r.code == 3);
  fs::remove_all(dir);
}

TEST_CASE("numeric failure exits with 4") {
  const auto dir = scratch("numeric");
  REQUIRE(run({"synth", "--days", "40", "--out", dir.string()}).code == 0);
  json cfg = small_run(dir / "synth.csv");
  cfg["train"]["learning_rate"] = 1e300;
  cfg["train"]["max_epochs"] = 20;
  const auto r = run({"train", "--config", write_config(dir, cfg).string(), "--out", (dir / "out").string()});
  CHECK(r.code == 4);
  fs::remove_all(dir);
}

TEST_CASE("train, evaluate and explain end to end") {
  const auto dir = scratch("e2e");
  REQUIRE(run({"synth", "--days", "60", "--out", dir.string()}).code == 0);
  const auto csv = dir / "synth.csv";
  json cfg = small_run(csv);
  cfg["data"]["test_start"] = "2019-02-20";
  cfg["synth"] = {{"spec_file", (dir / "synth_spec.json").string()}};
  const auto t = run({"train", "--config", write_config(dir, cfg).string(), "--out", (dir / "train").string()});
  REQUIRE_MESSAGE(t.code == 0, t.err);
  for (const char* f : {"model.ckpt", "history.csv", "forecast.csv", "report.json", "config.json", "manifest.json"})
    CHECK(fs::exists(dir / "train" / f));
  CHECK(json::parse(slurp(dir / "train" / "manifest.json")).contains("analytic_crps"));

  // The realised prices as a degenerate forecast score zero.
  std::ifstream fc(dir / "train" / "forecast.csv");
  std::string header;
  std::getline(fc, header);
  CHECK(header == "day,hour,gamma,value");
  const auto ev = run({"evaluate", "--data", csv.string(), "--forecast", (dir / "train" / "forecast.csv").string(),
                       "--out", (dir / "eval").string()});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  const auto report = json::parse(slurp(dir / "eval" / "report.json"));
  CHECK(report.at("crps").get<double>() > 0.0);

  std::ifstream frame(csv);
  std::getline(frame, header);
  std::ostringstream perfect;
  perfect << "day,hour,gamma,value\n";
  std::string line;
  int row = 0;
  while (std::getline(frame, line)) {
    const std::string day = line.substr(0, 10);
    const auto comma = line.find(',');
    const std::string price = line.substr(comma + 1, line.find(',', comma + 1) - comma - 1);
    if (day >= "2019-02-20")
      for (const char* g : {"0.25", "0.5", "0.75"}) perfect << day << ',' << row % 24 << ',' << g << ',' << price << '\n';
    ++row;
  }
  std::ofstream(dir / "perfect.csv") << perfect.str();
  const auto pe = run({"evaluate", "--data", csv.string(), "--forecast", (dir / "perfect.csv").string(), "--out",
                       (dir / "eval_perfect").string()});
  REQUIRE_MESSAGE(pe.code == 0, pe.err);
  CHECK(json::parse(slurp(dir / "eval_perfect" / "report.json")).at("crps").get<double>() == 0.0);

  const auto ex = run({"explain", "--checkpoint", (dir / "train" / "model.ckpt").string(), "--out",
                       (dir / "explain").string()});
  REQUIRE_MESSAGE(ex.code == 0, ex.err);
  CHECK(fs::exists(dir / "explain" / "shapes" / "manifest.json"));
  CHECK(fs::exists(dir / "explain" / "shapes" / "shape_load_fcst_h07.csv"));

  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK(run({"explain", "--checkpoint", (dir / "junk.ckpt").string(), "--out", (dir / "x").string()}).code == 3);
  fs::remove_all(dir);
}

TEST_CASE("backtest writes one checkpoint per block and is repeatable") {
  const auto dir = scratch("backtest");
  REQUIRE(run({"synth", "--days", "50", "--out", dir.string()}).code == 0);
  json cfg = small_run(dir / "synth.csv");
  cfg["backtest"] = {{"test_start", "2019-02-06"}, {"test_end", "2019-02-19"}, {"folds", 2}};
  const auto path = write_config(dir, cfg);
  const auto a = run({"backtest", "--config", path.string(), "--out", (dir / "a").string()});
  REQUIRE_MESSAGE(a.code == 0, a.err);
  CHECK(fs::exists(dir / "a" / "checkpoints" / "block_000.ckpt"));
  CHECK(fs::exists(dir / "a" / "checkpoints" / "block_001.ckpt"));
  CHECK_FALSE(fs::exists(dir / "a" / "checkpoints" / "block_002.ckpt"));
  REQUIRE(run({"backtest", "--config", path.string(), "--out", (dir / "b").string()}).code == 0);
  CHECK(slurp(dir / "a" / "forecast.csv") == slurp(dir / "b" / "forecast.csv"));
  fs::remove_all(dir);
}
