#include "doctest.h"

#include <cmath>
#include <sstream>

#include "qnbm/dataset.hpp"
#include "qnbm/error.hpp"
#include "qnbm/synth.hpp"

using namespace qnbm;
using namespace qnbm::data;

namespace {

const CsvOptions kPriceOnly{{"timestamp", "price"}, 3, true};

// Hourly rows for `days` days starting 2021-03-01, price = hour index.
std::string hourly_csv(int days, const std::string& offset = "Z", std::vector<int> skip = {}) {
  std::ostringstream out;
  out << "timestamp,price,load_fcst\n";
  int i = 0;
  for (int d = 0; d < days; ++d)
    for (int h = 0; h < 24; ++h, ++i) {
      if (std::find(skip.begin(), skip.end(), i) != skip.end()) continue;
      char ts[64];
      std::snprintf(ts, sizeof ts, "2021-03-%02dT%02d:00%s", d + 1, h, offset.c_str());
      out << ts << ',' << i << ',' << 2 * i << '\n';
    }
  return out.str();
}

TimeSeriesFrame parse(const std::string& text, const CsvOptions& opts = kPriceOnly) {
  std::istringstream in(text);
  return parse_csv(in, opts, "test.csv");
}

}  // namespace

TEST_CASE("timestamps and dates round trip") {
  int off = 0;
  const Timestamp ts = parse_timestamp("2021-03-01T05:00+01:00", &off);
  CHECK(off == 60);
  CHECK(format_timestamp(ts, off) == "2021-03-01T05:00:00+01:00");
  CHECK(parse_date("1970-01-01") == 0);
  CHECK(format_date(parse_date("2024-02-29")) == "2024-02-29");
  CHECK(day_of_week(parse_date("2021-03-01")) == 0);
  CHECK(day_of_week(parse_date("2021-03-07")) == 6);
  CHECK(day_of(-1) == -1);
  CHECK_THROWS_AS(parse_timestamp("2021-13-01T00:00"), DataError);
  CHECK_THROWS_AS(parse_date("2021-3-1"), DataError);
}

TEST_CASE("a clean CSV parses into whole days") {
  const auto f = parse(hourly_csv(3));
  CHECK(f.days() == 3);
  CHECK(f.first_day() == parse_date("2021-03-01"));
  CHECK(f.price[30] == 30.0);
  CHECK(f.series("load_fcst").values[30] == 60.0);
  CHECK_THROWS_AS(f.series("wind_fcst"), SchemaError);
}

TEST_CASE("short gaps are interpolated and long gaps rejected") {
  const auto f = parse(hourly_csv(2, "Z", {10, 11, 12}));
  CHECK(f.hours() == 48);
  for (int t : {10, 11, 12}) CHECK(f.price[t] == doctest::Approx(t).epsilon(1e-12));
  CHECK_THROWS_AS(parse(hourly_csv(2, "Z", {10, 11, 12, 13})), DataError);
  CsvOptions strict = kPriceOnly;
  strict.linear_fill = false;
  CHECK_THROWS_AS(parse(hourly_csv(2, "Z", {10}), strict), DataError);
}

TEST_CASE("partial leading and trailing days are dropped") {
  std::string text = hourly_csv(3);
  std::istringstream in(text);
  std::string header, line, body;
  std::getline(in, header);
  int n = 0;
  while (std::getline(in, line))
    if (n++ >= 5 && n <= 70) body += line + "\n";
  const auto f = parse(header + "\n" + body);
  CHECK(f.days() == 1);
  CHECK(f.first_day() == parse_date("2021-03-02"));
}

TEST_CASE("changing offsets, duplicates and bad headers are rejected") {
  std::string mixed = hourly_csv(1, "+01:00");
  mixed += "2021-03-02T00:00+02:00,24,48\n";
  CHECK_THROWS_WITH_AS(parse(mixed), doctest::Contains("UTC offset"), DataError);

  std::string dup = hourly_csv(1);
  dup += "2021-03-01T03:00Z,1,1\n2021-03-01T04:00Z,1,1\n";
  try {
    parse(dup);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("duplicate timestamp") == std::string::npos);
    CHECK(msg.find("precedes") != std::string::npos);
  }
  std::string dup2 = "timestamp,price\n2021-03-01T00:00Z,1\n2021-03-01T00:00Z,2\n";
  CHECK_THROWS_WITH_AS(parse(dup2), doctest::Contains("duplicate timestamp"), DataError);

  CHECK_THROWS_AS(parse("time,price\n"), SchemaError);
  CHECK_THROWS_AS(parse(""), SchemaError);
  CHECK_THROWS_AS(parse("timestamp,price,price\n"), SchemaError);
  CHECK_THROWS_AS(parse(hourly_csv(1), CsvOptions{}), SchemaError);
  CHECK_THROWS_AS(parse("timestamp,price\n2021-03-01T00:30Z,1\n"), DataError);
  CHECK_THROWS_AS(parse("timestamp,price\n2021-03-01T00:00Z,abc\n"), DataError);
}

TEST_CASE("write and parse round trip") {
  const auto f = synth_generate(30, SynthSpec{});
  std::ostringstream out;
  write_csv(f, out);
  const auto g = parse(out.str(), CsvOptions{});
  CHECK(g.timestamps == f.timestamps);
  for (std::size_t t = 0; t < f.hours(); ++t) CHECK(g.price[t] == f.price[t]);
  CHECK(g.series("wind_fcst").values == f.series("wind_fcst").values);
}

TEST_CASE("slice_days clamps to the frame span") {
  const auto f = synth_generate(40, SynthSpec{});
  const DayNumber d0 = f.first_day();
  const auto s = slice_days(f, d0 + 5, d0 + 9);
  CHECK(s.days() == 5);
  CHECK(s.first_day() == d0 + 5);
  CHECK(s.price[0] == f.price[5 * 24]);
  CHECK(slice_days(f, d0 - 10, d0 + 100).days() == 40);
}

TEST_CASE("calendar features") {
  const DayNumber monday = parse_date("2021-03-01");
  const std::vector<DayNumber> days{monday, monday + 3, monday + 10};
  const auto names = calendar_feature_names({});
  REQUIRE(names.size() == 3);
  const auto m = calendar_features(days, {}, AgeAnchor{monday, monday + 5});
  CHECK(m(0, 0) == doctest::Approx(0.0));
  CHECK(m(0, 1) == doctest::Approx(1.0));
  const double angle = 2.0 * M_PI * 3.0 / 7.0;
  CHECK(m(1, 0) == doctest::Approx(std::sin(angle)));
  CHECK(m(1, 1) == doctest::Approx(std::cos(angle)));
  CHECK(m(0, 2) == 0.0);
  CHECK(m(1, 2) == doctest::Approx(0.6));
  CHECK(m(2, 2) == doctest::Approx(2.0));
  CHECK(calendar_feature_names({false, false}).empty());
}

TEST_CASE("windows carry yesterday's prices and today's forecasts") {
  const auto f = synth_generate(30, SynthSpec{});
  WindowConfig cfg;
  const auto w = build_windows(f, cfg);
  CHECK(w.size() == 30 - 7);
  CHECK(w.feature_count() == cfg.feature_count());
  CHECK(w.feature_count() == 3 * 24 + 3 * 24 + 3);
  CHECK(w.price_lag_columns == 72);
  CHECK(w.feature_names[0] == "price_lag1_h00");
  const auto& load = f.series("load_fcst").values;
  for (std::size_t r : {std::size_t{0}, w.size() - 1}) {
    const std::size_t day = r + 7;
    CHECK(w.days[r] == f.first_day() + static_cast<DayNumber>(day));
    for (std::size_t h = 0; h < 24; ++h) {
      CHECK(w.inputs(r, h) == f.price[(day - 1) * 24 + h]);
      CHECK(w.inputs(r, 24 + h) == f.price[(day - 2) * 24 + h]);
      CHECK(w.inputs(r, 48 + h) == f.price[(day - 7) * 24 + h]);
      CHECK(w.inputs(r, 72 + h) == load[day * 24 + h]);
      CHECK(w.targets(r, h) == f.price[day * 24 + h]);
    }
  }
  const auto sel = select_days(w, w.days[3], w.days[5]);
  CHECK(sel.size() == 3);
  CHECK(sel.inputs(0, 0) == w.inputs(3, 0));
  const std::size_t bad[] = {w.size()};
  CHECK_THROWS_AS(select_rows(w, bad), ShapeError);
  CHECK(feature_names_hash(w.feature_names) != feature_names_hash(std::span(w.feature_names).first(10)));
}

TEST_CASE("feature names decode to what produced them") {
  const auto f = synth_generate(30, SynthSpec{});
  const auto w = build_windows(f, WindowConfig{});
  for (const auto& name : w.feature_names) CHECK(feature_name(decode_feature_name(name)) == name);
  const auto ref = decode_feature_name("wind_fcst_h13");
  CHECK(ref.kind == FeatureKind::Exogenous);
  CHECK(ref.hour == 13);
  CHECK(decode_feature_name("price_lag7_h02").lag_days == 7);
  CHECK_THROWS_AS(decode_feature_name("price_lag0_h02"), DataError);
  CHECK_THROWS_AS(decode_feature_name("load_fcst_h24"), DataError);
  CHECK_THROWS_AS(decode_feature_name("nonsense"), DataError);
}

TEST_CASE("synthetic frames are deterministic per seed") {
  SynthSpec spec;
  const auto a = synth_generate(60, spec);
  const auto b = synth_generate(60, spec);
  CHECK(a.price == b.price);
  spec.seed = 2;
  CHECK(synth_generate(60, spec).price != a.price);
  CHECK_THROWS_AS(synth_generate(29, SynthSpec{}), ParameterError);
  SynthSpec bad;
  bad.sigma[3] = -1.0;
  CHECK_THROWS_AS(synth_generate(30, bad), ParameterError);
  CHECK_THROWS_AS(synth_spec_from_json("{\"bogus\": 1}"), ConfigError);
  const auto back = synth_spec_from_json(synth_spec_to_json(spec));
  CHECK(back.seed == 2);
  CHECK(back.sigma == spec.sigma);
}

TEST_CASE("true quantiles match the Gaussian construction") {
  SynthSpec spec;
  const auto f = synth_generate(60, spec);
  const std::vector<double> levels{0.1, 0.5, 0.9};
  const std::vector<DayNumber> days{f.first_day() + 10, f.first_day() + 40};
  const auto q = synth_true_quantiles(f, spec, days, levels);
  const auto& load = f.series("load_fcst").values;
  const auto& wind = f.series("wind_fcst").values;
  const double z90 = 1.2815515655446004;
  for (std::size_t d = 0; d < days.size(); ++d)
    for (std::size_t h = 0; h < 24; ++h) {
      const std::size_t t = static_cast<std::size_t>(days[d] - f.first_day()) * 24 + h;
      const double mean = spec.base[h] + spec.load_coef * load[t] + spec.wind_coef * wind[t];
      CHECK(q.at(d, h, 1) == doctest::Approx(mean).epsilon(1e-12));
      CHECK(q.at(d, h, 2) - q.at(d, h, 1) == doctest::Approx(spec.sigma[h] * z90).epsilon(1e-9));
      CHECK(q.at(d, h, 1) - q.at(d, h, 0) == doctest::Approx(spec.sigma[h] * z90).epsilon(1e-9));
    }
  const std::vector<DayNumber> outside{f.last_day() + 1};
  CHECK_THROWS_AS(synth_true_quantiles(f, spec, outside, levels), ParameterError);
}
