#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <fstream>
#include <limits>
#include <sstream>

#include "qnbm/dataset.hpp"
#include "qnbm/error.hpp"
#include "qnbm/format.hpp"

namespace qnbm::data {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

int parse_digits(std::string_view text, std::size_t pos, std::size_t count, std::string_view whole) {
  if (pos + count > text.size()) throw DataError("malformed timestamp '" + std::string(whole) + "'");
  int value = 0;
  for (std::size_t i = pos; i < pos + count; ++i) {
    const char c = text[i];
    if (c < '0' || c > '9') throw DataError("malformed timestamp '" + std::string(whole) + "'");
    value = value * 10 + (c - '0');
  }
  return value;
}

void expect_char(std::string_view text, std::size_t pos, std::string_view allowed, std::string_view whole) {
  if (pos >= text.size() || allowed.find(text[pos]) == std::string_view::npos)
    throw DataError("malformed timestamp '" + std::string(whole) + "'");
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return fields;
}

double parse_cell(std::string_view cell, std::size_t line_no, std::string_view column) {
  if (cell.empty() || cell == "NaN" || cell == "nan" || cell == "NA") return kMissing;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value)) {
    throw DataError("line " + std::to_string(line_no) + ": column '" + std::string(column) +
                    "' holds non-numeric value '" + std::string(cell) + "'");
  }
  return value;
}

// Interpolates interior runs of NaN no longer than `limit`; anything else is
// rejected with the offending timestamp.
void fill_gaps(std::vector<double>& values, const std::vector<Timestamp>& stamps,
               std::string_view name, const CsvOptions& options, int offset) {
  const std::size_t n = values.size();
  std::size_t i = 0;
  while (i < n) {
    if (!std::isnan(values[i])) {
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end < n && std::isnan(values[end])) ++end;
    const std::size_t run = end - i;
    const bool interior = i > 0 && end < n;
    if (!options.linear_fill || !interior || run > options.fill_limit_hours) {
      throw DataError("series '" + std::string(name) + "': " + std::to_string(run) +
                      " missing hour(s) starting at " + format_timestamp(stamps[i], offset) +
                      (interior ? " exceed the fill limit of " + std::to_string(options.fill_limit_hours)
                                : " at the edge of the file cannot be interpolated"));
    }
    const double left = values[i - 1];
    const double right = values[end];
    for (std::size_t k = i; k < end; ++k) {
      const double w = static_cast<double>(k - i + 1) / static_cast<double>(run + 1);
      values[k] = left + w * (right - left);
    }
    i = end;
  }
}

}  // namespace

Timestamp parse_timestamp(std::string_view text, int* offset_minutes) {
  const std::string_view s = trim(text);
  const int year = parse_digits(s, 0, 4, text);
  expect_char(s, 4, "-", text);
  const int month = parse_digits(s, 5, 2, text);
  expect_char(s, 7, "-", text);
  const int day = parse_digits(s, 8, 2, text);
  expect_char(s, 10, "T ", text);
  const int hour = parse_digits(s, 11, 2, text);
  expect_char(s, 13, ":", text);
  const int minute = parse_digits(s, 14, 2, text);
  std::size_t pos = 16;
  int second = 0;
  if (pos < s.size() && s[pos] == ':') {
    second = parse_digits(s, pos + 1, 2, text);
    pos += 3;
  }
  int offset = 0;
  if (pos < s.size()) {
    if (s[pos] == 'Z' && pos + 1 == s.size()) {
      offset = 0;
    } else if ((s[pos] == '+' || s[pos] == '-') && s.size() == pos + 6 && s[pos + 3] == ':') {
      const int oh = parse_digits(s, pos + 1, 2, text);
      const int om = parse_digits(s, pos + 4, 2, text);
      offset = (s[pos] == '-' ? -1 : 1) * (oh * 60 + om);
    } else {
      throw DataError("malformed timestamp '" + std::string(text) + "'");
    }
  }
  const std::chrono::year_month_day ymd{std::chrono::year{year},
                                        std::chrono::month{static_cast<unsigned>(month)},
                                        std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok() || hour > 23 || minute > 59 || second > 59)
    throw DataError("invalid calendar value in timestamp '" + std::string(text) + "'");
  if (offset_minutes) *offset_minutes = offset;
  const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
  return static_cast<Timestamp>(days) * kSecondsPerDay + hour * 3600 + minute * 60 + second;
}

std::string format_timestamp(Timestamp ts, int offset_minutes) {
  const DayNumber day = day_of(ts);
  const auto secs = ts - day * kSecondsPerDay;
  std::string out = format_date(day);
  char buf[32];
  std::snprintf(buf, sizeof buf, "T%02lld:%02lld:%02lld", static_cast<long long>(secs / 3600),
                static_cast<long long>((secs / 60) % 60), static_cast<long long>(secs % 60));
  out += buf;
  if (offset_minutes != 0) {
    const int a = std::abs(offset_minutes);
    std::snprintf(buf, sizeof buf, "%c%02d:%02d", offset_minutes < 0 ? '-' : '+', a / 60, a % 60);
    out += buf;
  }
  return out;
}

DayNumber parse_date(std::string_view text) {
  const std::string_view s = trim(text);
  if (s.size() != 10) throw DataError("malformed date '" + std::string(text) + "'");
  std::string full(s);
  full += "T00:00";
  return day_of(parse_timestamp(full));
}

std::string format_date(DayNumber day) {
  const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{day}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

int day_of_week(DayNumber day) {
  const std::chrono::weekday wd{std::chrono::sys_days{std::chrono::days{day}}};
  return static_cast<int>(wd.iso_encoding()) - 1;
}

DayNumber TimeSeriesFrame::first_day() const {
  if (timestamps.empty()) throw DataError("empty frame has no first day");
  return day_of(timestamps.front());
}

const Series& TimeSeriesFrame::series(std::string_view name) const {
  for (const auto& s : exogenous)
    if (s.name == name) return s;
  throw SchemaError("frame has no exogenous series '" + std::string(name) + "'");
}

Series& TimeSeriesFrame::series(std::string_view name) {
  for (auto& s : exogenous)
    if (s.name == name) return s;
  throw SchemaError("frame has no exogenous series '" + std::string(name) + "'");
}

TimeSeriesFrame slice_days(const TimeSeriesFrame& frame, DayNumber first, DayNumber last) {
  TimeSeriesFrame out;
  out.utc_offset_minutes = frame.utc_offset_minutes;
  for (const auto& s : frame.exogenous) out.exogenous.push_back({s.name, {}});
  if (frame.timestamps.empty()) return out;
  first = std::max(first, frame.first_day());
  last = std::min(last, frame.last_day());
  if (first > last) return out;
  const auto begin = static_cast<std::size_t>(first - frame.first_day()) * kHoursPerDay;
  const auto end = static_cast<std::size_t>(last - frame.first_day() + 1) * kHoursPerDay;
  auto cut = [&](const std::vector<double>& v) { return std::vector<double>(v.begin() + begin, v.begin() + end); };
  out.timestamps.assign(frame.timestamps.begin() + begin, frame.timestamps.begin() + end);
  out.price = cut(frame.price);
  for (std::size_t i = 0; i < frame.exogenous.size(); ++i) out.exogenous[i].values = cut(frame.exogenous[i].values);
  return out;
}

bool TimeSeriesFrame::has_series(std::string_view name) const {
  return std::any_of(exogenous.begin(), exogenous.end(), [&](const Series& s) { return s.name == name; });
}

void TimeSeriesFrame::validate() const {
  const std::size_t n = timestamps.size();
  if (price.size() != n) throw DataError("price length differs from timestamp count");
  for (const auto& s : exogenous)
    if (s.values.size() != n) throw DataError("series '" + s.name + "' length differs from timestamp count");
  if (n == 0) throw DataError("frame is empty");
  if (n % kHoursPerDay != 0) throw DataError("frame length " + std::to_string(n) + " is not a whole number of days");
  if (timestamps.front() - day_of(timestamps.front()) * kSecondsPerDay != 0)
    throw DataError("frame does not start at midnight");
  for (std::size_t i = 1; i < n; ++i) {
    if (timestamps[i] - timestamps[i - 1] != kSecondsPerHour)
      throw DataError("frame is not hourly at " + format_timestamp(timestamps[i], utc_offset_minutes));
  }
  auto check_finite = [&](const std::vector<double>& v, const std::string& name) {
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isfinite(v[i]))
        throw DataError("series '" + name + "' is not finite at " + format_timestamp(timestamps[i], utc_offset_minutes));
  };
  check_finite(price, "price");
  for (const auto& s : exogenous) check_finite(s.values, s.name);
}

TimeSeriesFrame parse_csv(std::istream& in, const CsvOptions& options, std::string_view source) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(std::string(source) + ": missing header");
  const auto header_fields = split_fields(line);
  std::vector<std::string> header(header_fields.begin(), header_fields.end());
  if (!header.empty() && header[0].size() >= 3 && header[0].compare(0, 3, "\xEF\xBB\xBF") == 0)
    header[0].erase(0, 3);

  auto column_of = [&](std::string_view name) -> std::ptrdiff_t {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : it - header.begin();
  };
  for (const auto& required : options.required_columns) {
    if (column_of(required) < 0)
      throw SchemaError(std::string(source) + ": missing required column '" + required + "'");
  }
  for (std::size_t i = 0; i < header.size(); ++i)
    for (std::size_t j = i + 1; j < header.size(); ++j)
      if (header[i] == header[j]) throw SchemaError(std::string(source) + ": duplicate column '" + header[i] + "'");
  const auto ts_col = column_of("timestamp");
  const auto price_col = column_of("price");
  if (ts_col < 0 || price_col < 0)
    throw SchemaError(std::string(source) + ": columns 'timestamp' and 'price' are mandatory");

  std::vector<std::size_t> exo_cols;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (static_cast<std::ptrdiff_t>(c) != ts_col && static_cast<std::ptrdiff_t>(c) != price_col) exo_cols.push_back(c);

  struct RawRow {
    Timestamp ts;
    std::size_t line_no;
    std::vector<double> values;  // price followed by exogenous
  };
  std::vector<RawRow> rows;
  std::optional<int> offset;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size())
      throw DataError(std::string(source) + ": line " + std::to_string(line_no) + " has " +
                      std::to_string(fields.size()) + " fields, header has " + std::to_string(header.size()));
    int row_offset = 0;
    const Timestamp ts = parse_timestamp(fields[static_cast<std::size_t>(ts_col)], &row_offset);
    if (offset && *offset != row_offset)
      throw DataError(std::string(source) + ": line " + std::to_string(line_no) +
                      " changes the UTC offset (daylight-saving clocks are not supported; convert to a fixed offset)");
    offset = row_offset;
    if ((ts % kSecondsPerHour + kSecondsPerHour) % kSecondsPerHour != 0)
      throw DataError(std::string(source) + ": line " + std::to_string(line_no) + " is not on the hour");
    RawRow row{ts, line_no, {}};
    row.values.push_back(parse_cell(fields[static_cast<std::size_t>(price_col)], line_no, "price"));
    for (auto c : exo_cols) row.values.push_back(parse_cell(fields[c], line_no, header[c]));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(std::string(source) + ": no data rows");

  std::vector<std::string> problems;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].ts == rows[i - 1].ts) {
      problems.push_back("duplicate timestamp " + format_timestamp(rows[i].ts, *offset) + " at lines " +
                         std::to_string(rows[i - 1].line_no) + " and " + std::to_string(rows[i].line_no));
    } else if (rows[i].ts < rows[i - 1].ts) {
      problems.push_back("timestamp " + format_timestamp(rows[i].ts, *offset) + " at line " +
                         std::to_string(rows[i].line_no) + " precedes line " + std::to_string(rows[i - 1].line_no));
    }
  }
  if (!problems.empty()) {
    std::string msg = std::string(source) + ": timestamps are not strictly increasing:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }

  // Expand onto a complete hourly grid; absent hours become missing cells.
  const Timestamp start = rows.front().ts;
  const auto total = static_cast<std::size_t>((rows.back().ts - start) / kSecondsPerHour) + 1;
  const std::size_t width = 1 + exo_cols.size();
  std::vector<Timestamp> stamps(total);
  for (std::size_t i = 0; i < total; ++i) stamps[i] = start + static_cast<Timestamp>(i) * kSecondsPerHour;
  std::vector<std::vector<double>> columns(width, std::vector<double>(total, kMissing));
  for (const auto& row : rows) {
    const auto idx = static_cast<std::size_t>((row.ts - start) / kSecondsPerHour);
    for (std::size_t c = 0; c < width; ++c) columns[c][idx] = row.values[c];
  }
  fill_gaps(columns[0], stamps, "price", options, *offset);
  for (std::size_t c = 0; c < exo_cols.size(); ++c) fill_gaps(columns[c + 1], stamps, header[exo_cols[c]], options, *offset);

  // Day alignment: drop the partial leading and trailing days.
  std::size_t first = 0;
  while (first < total && (stamps[first] - day_of(stamps[first]) * kSecondsPerDay) != 0) ++first;
  const std::size_t whole_days = (total - first) / kHoursPerDay;
  if (whole_days == 0) throw DataError(std::string(source) + ": fewer than 24 hours starting at midnight");
  const std::size_t last = first + whole_days * kHoursPerDay;

  TimeSeriesFrame frame;
  frame.utc_offset_minutes = *offset;
  frame.timestamps.assign(stamps.begin() + static_cast<std::ptrdiff_t>(first), stamps.begin() + static_cast<std::ptrdiff_t>(last));
  frame.price.assign(columns[0].begin() + static_cast<std::ptrdiff_t>(first), columns[0].begin() + static_cast<std::ptrdiff_t>(last));
  for (std::size_t c = 0; c < exo_cols.size(); ++c) {
    frame.exogenous.push_back({header[exo_cols[c]],
                               std::vector<double>(columns[c + 1].begin() + static_cast<std::ptrdiff_t>(first),
                                                   columns[c + 1].begin() + static_cast<std::ptrdiff_t>(last))});
  }
  frame.validate();
  return frame;
}

TimeSeriesFrame load_csv(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return parse_csv(in, options, path.string());
}

void write_csv(const TimeSeriesFrame& frame, std::ostream& out) {
  out << "timestamp,price";
  for (const auto& s : frame.exogenous) out << ',' << s.name;
  out << '\n';
  for (std::size_t i = 0; i < frame.hours(); ++i) {
    out << format_timestamp(frame.timestamps[i], frame.utc_offset_minutes) << ',' << fmt_double(frame.price[i]);
    for (const auto& s : frame.exogenous) out << ',' << fmt_double(s.values[i]);
    out << '\n';
  }
}

void save_csv(const TimeSeriesFrame& frame, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_csv(frame, out);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace qnbm::data
