#include "qnbm/cli.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "qnbm/evaluation.hpp"
#include "qnbm/format.hpp"
#include "qnbm/interpret.hpp"
#include "qnbm/run_config.hpp"

#ifndef QNBM_VERSION
#define QNBM_VERSION "0.0.0"
#endif

namespace qnbm::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string model;
  std::string data;
  std::optional<std::size_t> days;
  std::vector<std::string> forecasts;
  std::vector<std::string> checkpoints;
};

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) {
    c.seed = *o.seed;
    c.train.seed = *o.seed;
    c.ensemble.base_seed = *o.seed;
    c.synth.spec.seed = *o.seed;
  }
  if (!o.out.empty()) c.out_dir = o.out;
  if (!o.model.empty()) c.model.kind = model::parse_model_kind(o.model);
  if (!o.data.empty()) c.data.csv = o.data;
  if (o.days) c.synth.n_days = *o.days;
  if (!o.forecasts.empty()) {
    c.evaluate.forecasts.assign(o.forecasts.begin(), o.forecasts.end());
    c.evaluate.names.clear();
  }
  if (!o.checkpoints.empty()) c.explain.checkpoints.assign(o.checkpoints.begin(), o.checkpoints.end());
  c.validate();
  return c;
}

/// Collects output files and writes the run manifest plus resolved config.
class Run {
 public:
  Run(std::string command, const RunConfig& config) : command_(std::move(command)), config_(config) {
    fs::create_directories(config.out_dir);
  }

  fs::path path(const std::string& name) {
    outputs_.push_back(name);
    return config_.out_dir / name;
  }

  void note(const std::string& key, json value) { extra_[key] = std::move(value); }

  void finish() {
    const std::string text = run_config_json(config_);
    {
      std::ofstream cfg(config_.out_dir / "config.json");
      cfg << text << '\n';
      if (!cfg) throw IoError("cannot write config.json in '" + config_.out_dir.string() + "'");
    }
    json m;
    m["command"] = command_;
    m["version"] = version();
    m["rng_algorithm"] = std::string(num::Rng::kAlgorithm);
    m["config_hash"] = hex64(fnv1a64(text));
    m["config"] = json::parse(text);
    m["seeds"] = {{"base", config_.seed}};
    m["outputs"] = outputs_;
    for (const auto& [k, v] : extra_.items()) m[k] = v;
    std::ofstream out(config_.out_dir / "manifest.json");
    out << m.dump(2) << '\n';
    if (!out) throw IoError("cannot write manifest.json in '" + config_.out_dir.string() + "'");
  }

 private:
  std::string command_;
  const RunConfig& config_;
  std::vector<std::string> outputs_;
  json extra_ = json::object();
};

ForecastCsvLayout layout_of(const RunConfig& c) {
  return c.layout == "wide" ? ForecastCsvLayout::Wide : ForecastCsvLayout::Long;
}

data::TimeSeriesFrame load_frame(const RunConfig& c) {
  if (c.data.csv.empty()) throw ConfigError("no input data: set data.csv or pass --data");
  data::CsvOptions opts;
  opts.required_columns = {"timestamp", "price"};
  for (const auto& e : c.windows.exogenous) opts.required_columns.push_back(e);
  return data::load_csv(c.data.csv, opts);
}

data::DayNumber day_or(const std::string& text, data::DayNumber fallback) {
  return text.empty() ? fallback : data::parse_date(text);
}

/// Realised prices of hours [0, horizon) for each listed day.
num::Matrix actual_prices(const data::TimeSeriesFrame& frame, std::span<const data::DayNumber> days,
                          std::size_t horizon) {
  num::Matrix y(days.size(), horizon);
  for (std::size_t d = 0; d < days.size(); ++d) {
    if (days[d] < frame.first_day() || days[d] > frame.last_day())
      throw DataError("forecast day " + data::format_date(days[d]) + " is not covered by the price data");
    const auto base = static_cast<std::size_t>(days[d] - frame.first_day()) * data::kHoursPerDay;
    for (std::size_t h = 0; h < horizon; ++h) y(d, h) = frame.price[base + h];
  }
  return y;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text << '\n';
  if (!out) throw IoError("cannot write '" + path.string() + "'");
}

void write_report(Run& run, const eval::EvalReport& report, const std::string& stem) {
  write_text(run.path(stem + ".json"), eval::report_json(report));
  std::ofstream csv(run.path(stem + ".csv"));
  eval::write_report_csv(report, csv);
  if (!csv) throw IoError("cannot write " + stem + ".csv");
}

std::string summary(const eval::EvalReport& r) {
  std::string s = "CRPS " + fmt_double(r.crps) + "  MAE " + fmt_double(r.mae);
  for (const auto& [pct, v] : r.picp) s += "  PICP" + std::to_string(pct) + " " + fmt_double(v);
  return s;
}

// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& c, std::ostream& out) {
  Run run("synth", c);
  data::SynthSpec spec = c.synth.spec_file.empty() ? c.synth.spec : data::load_synth_spec(c.synth.spec_file);
  const data::TimeSeriesFrame frame = data::synth_generate(c.synth.n_days, spec);
  data::save_csv(frame, run.path("synth.csv"));
  data::save_synth_spec(spec, run.path("synth_spec.json"));
  run.note("synth_seed", spec.seed);
  run.finish();
  out << "wrote " << frame.hours() << " hourly rows to " << (c.out_dir / "synth.csv").string() << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  Run run("train", c);
  const data::TimeSeriesFrame frame = load_frame(c);
  const data::DayNumber first_target = frame.first_day() + c.windows.max_lag_days();
  const bool has_test = !c.data.test_start.empty();
  const data::DayNumber test_start = day_or(c.data.test_start, frame.last_day() + 1);
  const data::DayNumber test_end = day_or(c.data.test_end, frame.last_day());
  const data::DayNumber train_first = std::max(first_target, day_or(c.data.train_start, first_target));
  const data::DayNumber train_last = day_or(c.data.train_end, test_start - 1);
  if (train_last < train_first) throw ConfigError("training range is empty");
  if (has_test && train_last >= test_start) throw ConfigError("training range overlaps the test range");

  data::WindowConfig wc = c.windows;
  wc.age_anchor = data::AgeAnchor{train_first, train_last};
  const data::WindowedDataset all = data::build_windows(frame, wc);
  const data::WindowedDataset train_ds = data::select_days(all, train_first, train_last);
  const data::WindowedDataset test_ds = has_test ? data::select_days(all, test_start, test_end) : train_ds;

  model::ModelConfig mc = c.model;
  train::TrainConfig tc = c.train;
  if (c.grid) {
    const auto grid = train::grid_search(mc, train_ds, tc, *c.grid);
    std::ofstream g(run.path("grid.csv"));
    g << "hidden_units,basis_count,learning_rate,dropout_rate,val_loss,diverged\n";
    for (const auto& cell : grid.cells)
      g << cell.model.hidden_units << ',' << cell.model.basis_count << ',' << fmt_double(cell.train.learning_rate)
        << ',' << fmt_double(cell.train.dropout_rate) << ',' << fmt_double(cell.val_loss) << ','
        << (cell.diverged ? 1 : 0) << '\n';
    mc = grid.best_cell().model;
    tc = grid.best_cell().train;
    run.note("grid_best", grid.best);
  }

  const auto ens = ensemble::run_ensemble(mc, train_ds, test_ds, tc, c.ensemble);
  for (const auto& w : ens.warnings) out << "warning: " << w << '\n';
  json members = json::array();
  for (const auto& m : ens.members) {
    if (!m.params) continue;
    const std::string suffix = c.ensemble.member_count == 1 ? "" : "_member_" + std::to_string(m.index);
    model::save_checkpoint(*m.params, run.path("model" + suffix + ".ckpt"));
    train::save_history_csv(m.history, run.path("history" + suffix + ".csv"));
    members.push_back({{"index", m.index}, {"seed", m.seed}, {"best_epoch", m.history.best_epoch}});
    out << "member " << m.index << ": " << m.history.epochs.size() << " epochs, best " << m.history.best_epoch
        << " (val " << fmt_double(m.history.best_val_loss) << ")\n";
  }
  run.note("members", members);
  if (has_test) {
    save_forecast_csv(ens.forecast, run.path("forecast.csv"), layout_of(c));
    const auto report = eval::evaluate(test_ds.targets, ens.forecast);
    write_report(run, report, "report");
    out << summary(report) << '\n';
    if (!c.synth.spec_file.empty()) {
      // Synthetic data: score the analytic quantiles on the same days as a floor.
      const data::SynthSpec spec = data::load_synth_spec(c.synth.spec_file);
      const auto truth = data::synth_true_quantiles(frame, spec, test_ds.days, mc.levels, mc.horizon);
      const double floor = eval::crps_pinball(test_ds.targets, truth);
      run.note("analytic_crps", floor);
      out << "analytic CRPS " << fmt_double(floor) << '\n';
    }
  }
  run.finish();
  return kExitOk;
}

int cmd_backtest(const RunConfig& c, std::ostream& out) {
  Run run("backtest", c);
  const data::TimeSeriesFrame frame = load_frame(c);
  const train::BacktestPlan plan = backtest_plan(c);
  train::BacktestOptions opts;
  opts.members = c.ensemble;
  opts.checkpoint_dir = c.out_dir / "checkpoints";
  opts.on_block = [&](const train::BacktestBlock& b) {
    out << "block " << b.index << " " << data::format_date(b.first) << ".." << data::format_date(b.last) << ": "
        << b.train_rows << " training days\n";
    for (const auto& w : b.warnings) out << "warning: " << w << '\n';
  };
  const auto result = train::backtest(plan, frame, c.windows, c.model, c.train, opts);
  save_forecast_csv(result.forecast, run.path("forecast.csv"), layout_of(c));
  const auto report = eval::evaluate(result.targets, result.forecast);
  write_report(run, report, "report");
  json blocks = json::array();
  for (const auto& b : result.blocks) {
    json files = json::array();
    for (const auto& p : b.checkpoints) {
      files.push_back(fs::relative(p, c.out_dir).generic_string());
      run.path(files.back().get<std::string>());
    }
    blocks.push_back({{"index", b.index},
                      {"first", data::format_date(b.first)},
                      {"last", data::format_date(b.last)},
                      {"train_first", data::format_date(b.train_first)},
                      {"train_last", data::format_date(b.train_last)},
                      {"train_rows", b.train_rows},
                      {"checkpoints", files}});
  }
  run.note("blocks", blocks);
  run.finish();
  out << summary(report) << '\n';
  return kExitOk;
}

int cmd_evaluate(const RunConfig& c, std::ostream& out) {
  if (c.evaluate.forecasts.empty()) throw ConfigError("nothing to evaluate: set evaluate.forecasts or pass --forecast");
  Run run("evaluate", c);
  const data::TimeSeriesFrame frame = load_frame(c);
  std::vector<QuantileForecast> forecasts;
  std::vector<std::string> names = c.evaluate.names;
  num::Matrix y;
  for (std::size_t i = 0; i < c.evaluate.forecasts.size(); ++i) {
    forecasts.push_back(load_forecast_csv(c.evaluate.forecasts[i]));
    if (names.size() <= i) names.push_back(c.evaluate.forecasts[i].stem().string());
    y = actual_prices(frame, forecasts.back().days, forecasts.back().horizon);
    const auto report = eval::evaluate(y, forecasts.back(), c.evaluate.intervals);
    write_report(run, report, c.evaluate.forecasts.size() == 1 ? "report" : "report_" + names[i]);
    out << names[i] << ": " << summary(report) << '\n';
  }
  if (forecasts.size() > 1) {
    for (std::size_t i = 1; i < forecasts.size(); ++i)
      if (forecasts[i].days != forecasts[0].days)
        throw DataError("forecast '" + names[i] + "' covers different days than '" + names[0] + "'");
    if (forecasts[0].size() < 30) {
      out << "warning: DM matrix skipped, fewer than 30 days\n";
    } else {
      const auto norm = c.evaluate.loss_norm == "l2" ? eval::LossNorm::L2 : eval::LossNorm::L1;
      const auto p = eval::dm_pvalue_matrix(y, forecasts, norm);
      std::ofstream dm(run.path("dm_matrix.csv"));
      eval::write_dm_matrix_csv(p, names, dm);
    }
  }
  run.finish();
  return kExitOk;
}

int cmd_explain(const RunConfig& c, std::ostream& out) {
  if (c.explain.checkpoints.empty()) throw ConfigError("nothing to explain: set explain.checkpoints or pass --checkpoint");
  Run run("explain", c);
  std::vector<model::ModelParams> members;
  for (const auto& p : c.explain.checkpoints) members.push_back(model::load_checkpoint(p));
  const auto& common = model::common_of(members.front());
  std::vector<std::size_t> hours = c.explain.hours;
  if (hours.empty())
    for (std::size_t h = 0; h < common.config.horizon; ++h) hours.push_back(h);
  std::vector<std::size_t> features;
  for (const auto& name : c.explain.features) {
    const auto it = std::find(common.feature_names.begin(), common.feature_names.end(), name);
    if (it == common.feature_names.end()) throw ConfigError("explain.features: model has no feature '" + name + "'");
    features.push_back(static_cast<std::size_t>(it - common.feature_names.begin()));
  }
  const auto bundle = interpret::extract_all(members, c.explain.levels, hours, features, c.explain.points);
  const auto files = interpret::save_bundle(bundle, c.out_dir / "shapes");
  for (const auto& f : files) run.path(fs::relative(f, c.out_dir).generic_string());
  run.path("shapes/manifest.json");
  run.finish();
  out << "wrote " << bundle.curves.size() << " curves for " << files.size() << " features\n";
  return kExitOk;
}

void report_error(std::ostream& err, const std::string& kind, const std::string& message) {
  err << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

const char* version() noexcept { return QNBM_VERSION; }

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Parameter:
      return kExitConfig;
    case ErrorKind::Data:
    case ErrorKind::Schema:
    case ErrorKind::Shape:
    case ErrorKind::Integrity:
    case ErrorKind::Incompatible:
      return kExitData;
    case ErrorKind::Numeric:
      return kExitNumeric;
    default:
      return kExitFailure;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Quantile neural basis model: train, backtest, evaluate and explain day-ahead price forecasts"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);
  Overrides o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--seed", o.seed, "Base seed (overrides the config)");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--model", o.model, "Model kind")->check(CLI::IsMember({"qnbm", "qrdnn"}));
    return sub;
  };
  auto* synth = common(app.add_subcommand("synth", "Generate a synthetic market with known quantiles"));
  synth->add_option("--days", o.days, "Number of days");
  auto* train = common(app.add_subcommand("train", "Fit a model (or ensemble) and forecast the test days"));
  train->add_option("--data", o.data, "Hourly market CSV");
  auto* backtest = common(app.add_subcommand("backtest", "Rolling backtest with periodic recalibration"));
  backtest->add_option("--data", o.data, "Hourly market CSV");
  auto* evaluate = common(app.add_subcommand("evaluate", "Score forecast CSVs against realised prices"));
  evaluate->add_option("--data", o.data, "Hourly market CSV with realised prices");
  evaluate->add_option("--forecast", o.forecasts, "Forecast CSV (long layout); repeat to compare models");
  auto* explain = common(app.add_subcommand("explain", "Export learned shape functions"));
  explain->add_option("--checkpoint", o.checkpoints, "Model checkpoint; repeat for ensemble members");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << version() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage", e.what());
    return kExitConfig;
  }

  try {
    const RunConfig config = resolve(o);
    if (synth->parsed()) return cmd_synth(config, out);
    if (train->parsed()) return cmd_train(config, out);
    if (backtest->parsed()) return cmd_backtest(config, out);
    if (evaluate->parsed()) return cmd_evaluate(config, out);
    return cmd_explain(config, out);
  } catch (const Error& e) {
    report_error(err, to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    report_error(err, to_string(ErrorKind::Io), e.what());
    return kExitFailure;
  } catch (const std::exception& e) {
    report_error(err, "internal", e.what());
    return kExitFailure;
  }
}

}  // namespace qnbm::cli
