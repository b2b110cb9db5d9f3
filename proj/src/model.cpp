#include "qnbm/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "qnbm/error.hpp"
#include "qnbm/format.hpp"
#include "qnbm/rng.hpp"

namespace qnbm::model {

namespace {

using nlohmann::json;

constexpr std::string_view kMagic = "QNBMCKPT";

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

num::Matrix row_of(std::span<const double> values) {
  return num::Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

std::vector<double> values_of(const num::Matrix& m) { return {m.values().begin(), m.values().end()}; }

// Non-trainable floating-point state shared by both kinds, in payload order.
std::vector<std::pair<std::string, num::Matrix>> common_tensors(const ModelCommon& c, double dropout_rate) {
  const auto& s = c.scaling;
  return {{"config.levels", row_of(c.config.levels)},
          {"config.scalars", num::Matrix(1, 3, {c.config.revin_epsilon, dropout_rate, s.revin.epsilon})},
          {"scaling.mean", row_of(s.columns.mean)},
          {"scaling.scale", row_of(s.columns.scale)},
          {"scaling.min", row_of(s.columns.min)},
          {"scaling.max", row_of(s.columns.max)},
          {"scaling.target", num::Matrix(1, 2, {s.target.mean, s.target.scale})},
          {"revin.scale", s.revin.affine_scale},
          {"revin.shift", s.revin.affine_shift}};
}

std::vector<std::pair<std::string, num::Matrix>> model_tensors(const ModelParams& params) {
  std::vector<std::pair<std::string, num::Matrix>> out;
  std::visit(
      [&](const auto& p) {
        for (const auto& t : trainable_tensors(p))
          if (!t.name.starts_with("revin.")) out.emplace_back(t.name, *t.tensor);
      },
      params);
  return out;
}

double dropout_of(const ModelParams& params) {
  return std::visit(overloaded{[](const QnbmParams& p) { return p.basis.dropout_rate; },
                               [](const QrdnnParams& p) { return p.dropout_rate; }},
                    params);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)]);
  return v;
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)]);
  return v;
}

json config_json(const ModelConfig& c) {
  return {{"kind", std::string(to_string(c.kind))},
          {"hidden_units", c.hidden_units},
          {"basis_count", c.basis_count},
          {"rank", c.rank},
          {"factorize_shape", c.factorize_shape},
          {"factorize_head", c.factorize_head},
          {"revin", c.revin},
          {"sort_quantiles", c.sort_quantiles},
          {"horizon", c.horizon},
          {"level_count", c.levels.size()}};
}

[[noreturn]] void corrupt(const std::string& what) { throw IntegrityError("checkpoint is corrupt: " + what); }

void expect_shape(const num::Matrix& m, std::size_t rows, std::size_t cols, const std::string& name) {
  if (m.rows() != rows || m.cols() != cols)
    corrupt("tensor '" + name + "' has shape " + m.shape_string() + ", expected (" + std::to_string(rows) + " x " +
            std::to_string(cols) + ")");
}

}  // namespace

ModelKind kind_of(const ModelParams& params) noexcept {
  return std::holds_alternative<QnbmParams>(params) ? ModelKind::Qnbm : ModelKind::Qrdnn;
}

const ModelCommon& common_of(const ModelParams& params) noexcept {
  return std::visit([](const auto& p) -> const ModelCommon& { return p.common; }, params);
}

ModelCommon& common_of(ModelParams& params) noexcept {
  return std::visit([](auto& p) -> ModelCommon& { return p.common; }, params);
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t count = 0;
  std::visit(
      [&](const auto& p) {
        for (const auto& t : trainable_tensors(p)) count += t.tensor->size();
      },
      params);
  return count;
}

ModelParams init_model(const ModelConfig& config, const data::WindowedDataset& train, double dropout_rate,
                       num::Rng& rng) {
  if (config.kind == ModelKind::Qnbm) return init_qnbm(config, train, dropout_rate, rng);
  return init_qrdnn(config, train, dropout_rate, rng);
}

num::Matrix predict(const ModelParams& params, const num::Matrix& inputs) {
  return std::visit([&](const auto& p) { return model::predict(p, inputs); }, params);
}

QuantileForecast forecast(const ModelParams& params, const data::WindowedDataset& data) {
  ensure_compatible(params, data);
  const auto& c = common_of(params);
  QuantileForecast fc;
  fc.days = data.days;
  fc.horizon = c.config.horizon;
  fc.levels = c.config.levels;
  fc.values = predict(params, data.inputs);
  return fc;
}

void ensure_compatible(const ModelParams& params, const data::WindowedDataset& data) {
  const auto& c = common_of(params);
  if (c.feature_count() != data.feature_count()) {
    throw ShapeError("model was built for n_f=" + std::to_string(c.feature_count()) + " features, dataset has n_f=" +
                     std::to_string(data.feature_count()));
  }
  if (c.feature_names != data.feature_names) {
    throw IncompatibleError("model feature names (hash " + hex64(data::feature_names_hash(c.feature_names)) +
                            ") differ from dataset feature names (hash " +
                            hex64(data::feature_names_hash(data.feature_names)) + ")");
  }
  if (c.config.horizon != data.horizon()) {
    throw ShapeError("model horizon " + std::to_string(c.config.horizon) + " differs from dataset horizon " +
                     std::to_string(data.horizon()));
  }
}

bool bitwise_equal(const ModelParams& a, const ModelParams& b) {
  if (kind_of(a) != kind_of(b)) return false;
  const auto& ca = common_of(a);
  const auto& cb = common_of(b);
  if (config_json(ca.config) != config_json(cb.config) || ca.feature_names != cb.feature_names ||
      ca.price_lag_columns != cb.price_lag_columns || ca.revision != cb.revision ||
      ca.scaling.revin.enabled != cb.scaling.revin.enabled ||
      ca.scaling.revin.first_column != cb.scaling.revin.first_column ||
      ca.scaling.revin.column_count != cb.scaling.revin.column_count)
    return false;
  const auto ta = common_tensors(ca, dropout_of(a));
  const auto tb = common_tensors(cb, dropout_of(b));
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (!num::bitwise_equal(ta[i].second, tb[i].second)) return false;
  const auto ma = model_tensors(a);
  const auto mb = model_tensors(b);
  if (ma.size() != mb.size()) return false;
  for (std::size_t i = 0; i < ma.size(); ++i)
    if (ma[i].first != mb[i].first || !num::bitwise_equal(ma[i].second, mb[i].second)) return false;
  return true;
}

std::string serialize_checkpoint(const ModelParams& params) {
  const auto& c = common_of(params);
  auto tensors = common_tensors(c, dropout_of(params));
  for (auto& t : model_tensors(params)) tensors.push_back(std::move(t));

  json header;
  header["model_type"] = std::string(to_string(kind_of(params)));
  header["format_version"] = kCheckpointVersion;
  header["rng_algorithm"] = std::string(num::Rng::kAlgorithm);
  header["config"] = config_json(c.config);
  header["feature_names"] = c.feature_names;
  header["feature_names_hash"] = hex64(data::feature_names_hash(c.feature_names));
  header["price_lag_columns"] = c.price_lag_columns;
  header["revin"] = {{"enabled", c.scaling.revin.enabled},
                     {"first_column", c.scaling.revin.first_column},
                     {"column_count", c.scaling.revin.column_count}};
  header["revision"] = c.revision;
  header["tensors"] = json::array();
  for (const auto& [name, m] : tensors) header["tensors"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  const std::string header_text = header.dump();

  std::string out(kMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, header_text.size());
  out += header_text;
  for (const auto& [name, m] : tensors)
    for (double v : m.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  put_u64(out, fnv1a64(out));
  return out;
}

ModelParams deserialize_checkpoint(const std::string& bytes) {
  const std::size_t fixed = kMagic.size() + 4 + 8;
  if (bytes.size() < fixed + 8) throw IntegrityError("checkpoint is truncated (" + std::to_string(bytes.size()) + " bytes)");
  if (bytes.compare(0, kMagic.size(), kMagic) != 0) throw IntegrityError("not a checkpoint file (bad magic)");
  const std::uint64_t stored = get_u64(bytes, bytes.size() - 8);
  if (fnv1a64(std::string_view(bytes).substr(0, bytes.size() - 8)) != stored)
    throw IntegrityError("checkpoint checksum mismatch (truncated or corrupted file)");
  const std::uint32_t version = get_u32(bytes, kMagic.size());
  if (version != kCheckpointVersion) {
    throw IncompatibleError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t header_len = get_u64(bytes, kMagic.size() + 4);
  if (header_len > bytes.size() - fixed - 8) corrupt("header length exceeds file size");

  json header;
  try {
    header = json::parse(bytes.substr(fixed, header_len));
  } catch (const json::exception& e) {
    corrupt(std::string("unreadable header: ") + e.what());
  }

  try {
    if (header.at("rng_algorithm").get<std::string>() != num::Rng::kAlgorithm)
      throw IncompatibleError("checkpoint was produced with RNG '" + header.at("rng_algorithm").get<std::string>() +
                              "', this build uses '" + std::string(num::Rng::kAlgorithm) + "'");
    std::map<std::string, num::Matrix> tensors;
    std::size_t pos = fixed + header_len;
    const std::size_t payload_end = bytes.size() - 8;
    for (const auto& t : header.at("tensors")) {
      const auto rows = t.at("rows").get<std::size_t>();
      const auto cols = t.at("cols").get<std::size_t>();
      if ((payload_end - pos) / 8 < rows * cols) corrupt("payload shorter than the declared tensors");
      std::vector<double> values(rows * cols);
      for (auto& v : values) {
        v = std::bit_cast<double>(get_u64(bytes, pos));
        pos += 8;
      }
      tensors[t.at("name").get<std::string>()] = num::Matrix(rows, cols, std::move(values));
    }
    if (pos != payload_end) corrupt("payload longer than the declared tensors");
    auto take = [&](const std::string& name) -> num::Matrix {
      const auto it = tensors.find(name);
      if (it == tensors.end()) corrupt("missing tensor '" + name + "'");
      return it->second;
    };

    const auto& cj = header.at("config");
    ModelCommon common;
    ModelConfig& cfg = common.config;
    cfg.kind = parse_model_kind(cj.at("kind").get<std::string>());
    cfg.hidden_units = cj.at("hidden_units").get<std::size_t>();
    cfg.basis_count = cj.at("basis_count").get<std::size_t>();
    cfg.rank = cj.at("rank").get<std::size_t>();
    cfg.factorize_shape = cj.at("factorize_shape").get<bool>();
    cfg.factorize_head = cj.at("factorize_head").get<bool>();
    cfg.revin = cj.at("revin").get<bool>();
    cfg.sort_quantiles = cj.at("sort_quantiles").get<bool>();
    cfg.horizon = cj.at("horizon").get<std::size_t>();
    cfg.levels = values_of(take("config.levels"));
    if (cfg.levels.size() != cj.at("level_count").get<std::size_t>()) corrupt("quantile level count mismatch");
    const num::Matrix scalars = take("config.scalars");
    expect_shape(scalars, 1, 3, "config.scalars");
    cfg.revin_epsilon = scalars(0, 0);
    const double dropout_rate = scalars(0, 1);
    cfg.validate();

    common.feature_names = header.at("feature_names").get<std::vector<std::string>>();
    if (header.at("feature_names_hash").get<std::string>() != hex64(data::feature_names_hash(common.feature_names)))
      corrupt("feature-name hash mismatch");
    common.price_lag_columns = header.at("price_lag_columns").get<std::size_t>();
    common.revision = header.at("revision").get<std::uint64_t>();
    const std::size_t nf = common.feature_names.size();

    auto& s = common.scaling;
    for (auto [name, dst] : {std::pair{"scaling.mean", &s.columns.mean}, std::pair{"scaling.scale", &s.columns.scale},
                             std::pair{"scaling.min", &s.columns.min}, std::pair{"scaling.max", &s.columns.max}}) {
      const num::Matrix m = take(name);
      expect_shape(m, 1, nf, name);
      *dst = values_of(m);
    }
    const num::Matrix target = take("scaling.target");
    expect_shape(target, 1, 2, "scaling.target");
    s.target = {target(0, 0), target(0, 1)};
    const auto& rj = header.at("revin");
    s.revin.enabled = rj.at("enabled").get<bool>();
    s.revin.first_column = rj.at("first_column").get<std::size_t>();
    s.revin.column_count = rj.at("column_count").get<std::size_t>();
    s.revin.epsilon = scalars(0, 2);
    s.revin.affine_scale = take("revin.scale");
    s.revin.affine_shift = take("revin.shift");
    expect_shape(s.revin.affine_scale, 1, 1, "revin.scale");
    expect_shape(s.revin.affine_shift, 1, 1, "revin.shift");
    if (s.revin.first_column + s.revin.column_count > nf) corrupt("RevIN group exceeds the feature count");

    const std::size_t width = cfg.horizon * cfg.levels.size();
    const std::string type = header.at("model_type").get<std::string>();
    if (type != to_string(cfg.kind)) corrupt("model-type tag disagrees with the configuration");

    auto take_projection = [&](const std::string& prefix, bool factorized, std::size_t rows, std::size_t cols) {
      Projection p;
      p.factorized = factorized;
      if (factorized) {
        p.factors.a = take(prefix + ".a");
        p.factors.b = take(prefix + ".b");
        expect_shape(p.factors.a, rows, cfg.rank, prefix + ".a");
        expect_shape(p.factors.b, cols, cfg.rank, prefix + ".b");
      } else {
        p.dense = take(prefix);
        expect_shape(p.dense, rows, cols, prefix);
      }
      return p;
    };

    if (cfg.kind == ModelKind::Qnbm) {
      QnbmParams p;
      p.common = common;
      p.basis.w1 = take("basis.w1");
      p.basis.w2 = take("basis.w2");
      p.basis.b2 = take("basis.b2");
      p.basis.dropout_rate = dropout_rate;
      expect_shape(p.basis.w1, cfg.hidden_units, 1, "basis.w1");
      expect_shape(p.basis.w2, cfg.basis_count, cfg.hidden_units, "basis.w2");
      expect_shape(p.basis.b2, cfg.basis_count, 1, "basis.b2");
      p.shape.w = take_projection("shape.w", cfg.factorize_shape, cfg.basis_count, nf);
      p.head.v = take_projection("head.v", cfg.factorize_head, width, nf);
      p.head.beta = take("head.beta");
      expect_shape(p.head.beta, cfg.horizon, cfg.levels.size(), "head.beta");
      p.head.levels = cfg.levels;
      p.head.horizon = cfg.horizon;
      return p;
    }
    QrdnnParams p;
    p.common = common;
    p.dropout_rate = dropout_rate;
    p.hidden1 = {take("hidden1.weight"), take("hidden1.bias")};
    p.hidden2 = {take("hidden2.weight"), take("hidden2.bias")};
    p.output = {take("output.weight"), take("output.bias")};
    expect_shape(p.hidden1.weight, cfg.hidden_units, nf, "hidden1.weight");
    expect_shape(p.hidden1.bias, cfg.hidden_units, 1, "hidden1.bias");
    expect_shape(p.hidden2.weight, cfg.hidden_units, cfg.hidden_units, "hidden2.weight");
    expect_shape(p.hidden2.bias, cfg.hidden_units, 1, "hidden2.bias");
    expect_shape(p.output.weight, width, cfg.hidden_units, "output.weight");
    expect_shape(p.output.bias, width, 1, "output.bias");
    return p;
  } catch (const json::exception& e) {
    corrupt(std::string("malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    corrupt(e.what());
  }
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace qnbm::model
