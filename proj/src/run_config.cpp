#include "qnbm/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "qnbm/error.hpp"

namespace qnbm::cli {

namespace {

using nlohmann::json;

// Reads typed fields from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + path_ + "' must be a JSON object");
  }

  template <class T>
  void get(const char* key, T& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("'" + path_ + "." + key + "' has the wrong type");
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  Section child(const char* key) {
    seen_.insert(key);
    return Section(j_.at(key), path_ + "." + key);
  }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.contains(k)) throw ConfigError("unknown configuration key '" + path_ + "." + k + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_model(Section s, model::ModelConfig& m) {
  std::string kind(model::to_string(m.kind));
  s.get("kind", kind);
  m.kind = model::parse_model_kind(kind);
  s.get("hidden_units", m.hidden_units);
  s.get("basis_count", m.basis_count);
  s.get("rank", m.rank);
  s.get("factorize_shape", m.factorize_shape);
  s.get("factorize_head", m.factorize_head);
  s.get("revin", m.revin);
  s.get("revin_epsilon", m.revin_epsilon);
  s.get("sort_quantiles", m.sort_quantiles);
  s.get("levels", m.levels);
  s.finish();
}

void read_windows(Section s, data::WindowConfig& w) {
  s.get("price_lag_days", w.price_lag_days);
  s.get("horizon", w.horizon);
  s.get("exogenous", w.exogenous);
  s.get("day_of_week", w.calendar.day_of_week);
  s.get("series_age", w.calendar.series_age);
  s.finish();
}

void read_train(Section s, train::TrainConfig& t) {
  s.get("learning_rate", t.learning_rate);
  s.get("dropout_rate", t.dropout_rate);
  s.get("max_epochs", t.max_epochs);
  s.get("patience", t.patience);
  s.get("batch_size", t.batch_size);
  s.get("sub_block", t.sub_block);
  s.get("validation_fraction", t.validation_fraction);
  s.get("folds", t.folds);
  std::string scheme = t.validation == train::ValidationScheme::Random ? "random" : "sequential";
  s.get("validation", scheme);
  if (scheme == "random") t.validation = train::ValidationScheme::Random;
  else if (scheme == "sequential") t.validation = train::ValidationScheme::SequentialFolds;
  else throw ConfigError("train.validation must be \"random\" or \"sequential\", got \"" + scheme + "\"");
  s.finish();
}

json windows_json(const data::WindowConfig& w) {
  return {{"price_lag_days", w.price_lag_days},
          {"horizon", w.horizon},
          {"exogenous", w.exogenous},
          {"day_of_week", w.calendar.day_of_week},
          {"series_age", w.calendar.series_age}};
}

void check_date(const std::string& text, const char* what) {
  if (text.empty()) return;
  try {
    data::parse_date(text);
  } catch (const Error&) {
    throw ConfigError(std::string(what) + " is not a YYYY-MM-DD date: '" + text + "'");
  }
}

}  // namespace

void RunConfig::validate() const {
  try {
    model.validate();
    windows.validate();
    train.validate();
    ensemble.validate();
    if (grid) grid->validate();
    synth.spec.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  if (model.horizon != windows.horizon)
    throw ConfigError("model horizon differs from windows.horizon");
  if (layout != "long" && layout != "wide") throw ConfigError("layout must be \"long\" or \"wide\"");
  if (synth.n_days < 30) throw ConfigError("synth.n_days must be at least 30");
  check_date(data.train_start, "data.train_start");
  check_date(data.train_end, "data.train_end");
  check_date(data.test_start, "data.test_start");
  check_date(data.test_end, "data.test_end");
  check_date(backtest.test_start, "backtest.test_start");
  check_date(backtest.test_end, "backtest.test_end");
  if (backtest.cadence_days == 0 || backtest.folds == 0) throw ConfigError("backtest cadence and folds must be positive");
  if (evaluate.loss_norm != "l1" && evaluate.loss_norm != "l2") throw ConfigError("evaluate.loss_norm must be l1 or l2");
  if (!evaluate.names.empty() && evaluate.names.size() != evaluate.forecasts.size())
    throw ConfigError("evaluate.names must name every forecast");
  if (explain.points < 2) throw ConfigError("explain.points must be at least 2");
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section root(j, "config");
  root.get("seed", c.seed);
  std::string out = c.out_dir.string();
  root.get("out_dir", out);
  c.out_dir = out;
  root.get("layout", c.layout);
  if (root.has("data")) {
    Section s = root.child("data");
    std::string csv;
    s.get("csv", csv);
    c.data.csv = csv;
    s.get("train_start", c.data.train_start);
    s.get("train_end", c.data.train_end);
    s.get("test_start", c.data.test_start);
    s.get("test_end", c.data.test_end);
    s.finish();
  }
  if (root.has("synth")) {
    Section s = root.child("synth");
    s.get("n_days", c.synth.n_days);
    if (s.has("spec")) c.synth.spec = data::synth_spec_from_json(s.raw("spec").dump());
    std::string file;
    s.get("spec_file", file);
    c.synth.spec_file = file;
    s.finish();
  }
  if (root.has("model")) read_model(root.child("model"), c.model);
  if (root.has("windows")) read_windows(root.child("windows"), c.windows);
  c.model.horizon = c.windows.horizon;
  if (root.has("train")) read_train(root.child("train"), c.train);
  if (root.has("grid") && !root.raw("grid").is_null()) {
    Section s = root.child("grid");
    train::GridSpec g;
    s.get("hidden_units", g.hidden_units);
    s.get("basis_count", g.basis_count);
    s.get("learning_rate", g.learning_rate);
    s.get("dropout_rate", g.dropout_rate);
    s.finish();
    c.grid = g;
  }
  if (root.has("backtest")) {
    Section s = root.child("backtest");
    s.get("test_start", c.backtest.test_start);
    s.get("test_end", c.backtest.test_end);
    s.get("cadence_days", c.backtest.cadence_days);
    s.get("lookback_days", c.backtest.lookback_days);
    s.get("folds", c.backtest.folds);
    s.finish();
  }
  if (root.has("ensemble")) {
    Section s = root.child("ensemble");
    s.get("member_count", c.ensemble.member_count);
    s.get("sort_after", c.ensemble.sort_after);
    s.get("threads", c.ensemble.threads);
    s.finish();
  }
  if (root.has("evaluate")) {
    Section s = root.child("evaluate");
    std::vector<std::string> paths;
    s.get("forecasts", paths);
    c.evaluate.forecasts.assign(paths.begin(), paths.end());
    s.get("names", c.evaluate.names);
    s.get("intervals", c.evaluate.intervals);
    s.get("loss_norm", c.evaluate.loss_norm);
    s.finish();
  }
  if (root.has("explain")) {
    Section s = root.child("explain");
    std::vector<std::string> paths;
    s.get("checkpoints", paths);
    c.explain.checkpoints.assign(paths.begin(), paths.end());
    s.get("levels", c.explain.levels);
    s.get("hours", c.explain.hours);
    s.get("features", c.explain.features);
    s.get("points", c.explain.points);
    s.finish();
  }
  root.finish();
  c.ensemble.base_seed = c.seed;
  c.train.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read configuration '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir.string();
  j["layout"] = c.layout;
  j["data"] = {{"csv", c.data.csv.string()},
               {"train_start", c.data.train_start},
               {"train_end", c.data.train_end},
               {"test_start", c.data.test_start},
               {"test_end", c.data.test_end}};
  j["synth"] = {{"n_days", c.synth.n_days},
                {"spec", json::parse(data::synth_spec_to_json(c.synth.spec))},
                {"spec_file", c.synth.spec_file.string()}};
  const auto& m = c.model;
  j["model"] = {{"kind", std::string(model::to_string(m.kind))},
                {"hidden_units", m.hidden_units},
                {"basis_count", m.basis_count},
                {"rank", m.rank},
                {"factorize_shape", m.factorize_shape},
                {"factorize_head", m.factorize_head},
                {"revin", m.revin},
                {"revin_epsilon", m.revin_epsilon},
                {"sort_quantiles", m.sort_quantiles},
                {"levels", m.levels}};
  j["windows"] = windows_json(c.windows);
  const auto& t = c.train;
  j["train"] = {{"learning_rate", t.learning_rate},
                {"dropout_rate", t.dropout_rate},
                {"max_epochs", t.max_epochs},
                {"patience", t.patience},
                {"batch_size", t.batch_size},
                {"sub_block", t.sub_block},
                {"validation_fraction", t.validation_fraction},
                {"validation", t.validation == train::ValidationScheme::Random ? "random" : "sequential"},
                {"folds", t.folds}};
  if (c.grid) {
    j["grid"] = {{"hidden_units", c.grid->hidden_units},
                 {"basis_count", c.grid->basis_count},
                 {"learning_rate", c.grid->learning_rate},
                 {"dropout_rate", c.grid->dropout_rate}};
  }
  j["backtest"] = {{"test_start", c.backtest.test_start},
                   {"test_end", c.backtest.test_end},
                   {"cadence_days", c.backtest.cadence_days},
                   {"lookback_days", c.backtest.lookback_days},
                   {"folds", c.backtest.folds}};
  j["ensemble"] = {{"member_count", c.ensemble.member_count},
                   {"sort_after", c.ensemble.sort_after},
                   {"threads", c.ensemble.threads}};
  std::vector<std::string> fc;
  for (const auto& p : c.evaluate.forecasts) fc.push_back(p.string());
  j["evaluate"] = {{"forecasts", fc},
                   {"names", c.evaluate.names},
                   {"intervals", c.evaluate.intervals},
                   {"loss_norm", c.evaluate.loss_norm}};
  std::vector<std::string> ck;
  for (const auto& p : c.explain.checkpoints) ck.push_back(p.string());
  j["explain"] = {{"checkpoints", ck},
                  {"levels", c.explain.levels},
                  {"hours", c.explain.hours},
                  {"features", c.explain.features},
                  {"points", c.explain.points}};
  return j.dump(2);
}

train::BacktestPlan backtest_plan(const RunConfig& c) {
  if (c.backtest.test_start.empty() || c.backtest.test_end.empty())
    throw ConfigError("backtest.test_start and backtest.test_end are required");
  train::BacktestPlan plan;
  plan.test_start = data::parse_date(c.backtest.test_start);
  plan.test_end = data::parse_date(c.backtest.test_end);
  plan.cadence_days = c.backtest.cadence_days;
  plan.lookback_days = c.backtest.lookback_days;
  plan.folds = c.backtest.folds;
  plan.validate();
  return plan;
}

}  // namespace qnbm::cli
