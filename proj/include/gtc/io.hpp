#pragma once

// Text formats: edge lists, node feature tables, and JSON model files.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "gtc/error.hpp"
#include "gtc/graph.hpp"
#include "gtc/matrix.hpp"
#include "gtc/model.hpp"

namespace gtc {

/// Node features, one column per node (d_in × n).
struct FeatureMatrix {
  Matrix x;
  double max_column_norm = 0.0;  ///< √α bound observed on this input

  FeatureMatrix() = default;
  explicit FeatureMatrix(Matrix m) : x(std::move(m)) {
    for (double v : column_norms(x)) max_column_norm = std::max(max_column_norm, v);
  }
};

/// Loaded model plus operator norms of every weight, computed at load time.
struct ModelFile {
  Model model;
  std::vector<LayerNorms> audit;
};

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path.string());
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string_view strip_comment(std::string_view s) {
  const auto hash = s.find('#');
  return trim(hash == std::string_view::npos ? s : s.substr(0, hash));
}

/// Splits on whitespace and commas, dropping empty fields.
inline std::vector<std::string_view> split_fields(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == ',' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && !(s[j] == ' ' || s[j] == '\t' || s[j] == ',' || s[j] == '\r')) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

template <class Fn>
void for_each_line(const std::string& text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto end = nl == std::string::npos ? text.size() : nl;
    ++line_no;
    fn(std::string_view(text).substr(pos, end - pos), line_no);
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }
}

/// Shortest-safe decimal form that round-trips bit-exactly (17 significant
/// digits) and always reads back as a floating-point literal.
inline void append_double(std::string& out, double v) {
  char buf[40];
  const int len = std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string_view s(buf, static_cast<std::size_t>(len));
  out.append(s);
  if (s.find_first_of(".eE") == std::string_view::npos) out.append(".0");
}

inline void append_matrix(std::string& out, const Matrix& m, std::string_view indent) {
  out.push_back('[');
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out.append(r ? ",\n" : "\n");
    out.append(indent);
    out.append("  [");
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) out.append(", ");
      append_double(out, m(r, c));
    }
    out.push_back(']');
  }
  out.push_back('\n');
  out.append(indent);
  out.push_back(']');
}

inline void append_vector(std::string& out, const Vector& v) {
  out.push_back('[');
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out.append(", ");
    append_double(out, v[i]);
  }
  out.push_back(']');
}

inline Matrix json_matrix(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw IoError(what + " must be a non-empty array of rows");
  const std::size_t rows = j.size();
  std::size_t cols = 0;
  std::vector<double> values;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& row = j[r];
    if (!row.is_array() || row.empty()) throw IoError(what + " row " + std::to_string(r) + " is not a non-empty array");
    if (r == 0) {
      cols = row.size();
      values.reserve(rows * cols);
    } else if (row.size() != cols) {
      throw IoError(what + " row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                    " entries, expected " + std::to_string(cols));
    }
    for (const auto& v : row) {
      if (!v.is_number()) throw IoError(what + " contains a non-numeric entry");
      const double x = v.get<double>();
      if (!std::isfinite(x)) throw IoError(what + " contains a non-finite entry");
      values.push_back(x);
    }
  }
  return Matrix(rows, cols, std::move(values));
}

inline Vector json_vector(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array()) throw IoError(what + " must be an array");
  Vector out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw IoError(what + " contains a non-numeric entry");
    out.push_back(v.get<double>());
    if (!std::isfinite(out.back())) throw IoError(what + " contains a non-finite entry");
  }
  return out;
}

inline std::size_t json_count(const nlohmann::json& doc, const char* key) {
  if (!doc.contains(key)) throw IoError(std::string("model file missing \"") + key + "\"");
  const auto& v = doc[key];
  if (!v.is_number_unsigned()) throw IoError(std::string("\"") + key + "\" must be a non-negative integer");
  return v.get<std::size_t>();
}

}  // namespace detail

// ---------------------------------------------------------------- graphs

/// Edge-list file: one "i j" pair per line, 0-indexed, '#' starts a comment.
/// n is max index + 1, or n_hint when that is larger.
inline AttentionGraph parse_graph(const std::string& text,
                                  std::optional<std::size_t> n_hint = std::nullopt) {
  std::vector<AttentionGraph::Edge> edges;
  std::vector<std::size_t> lines;
  std::size_t max_index = 0;
  bool any = false;
  detail::for_each_line(text, [&](std::string_view raw, std::size_t line_no) {
    const auto body = detail::strip_comment(raw);
    if (body.empty()) return;
    const auto fields = detail::split_fields(body);
    std::size_t i = 0;
    std::size_t j = 0;
    if (fields.size() != 2 || !detail::parse_number(fields[0], i) ||
        !detail::parse_number(fields[1], j)) {
      throw IoError("malformed edge line \"" + std::string(body) + "\"", line_no);
    }
    if (n_hint && (i >= *n_hint || j >= *n_hint)) {
      throw IoError("edge index exceeds node count " + std::to_string(*n_hint), line_no);
    }
    max_index = std::max({max_index, i, j});
    any = true;
    edges.emplace_back(i, j);
    lines.push_back(line_no);
  });

  // Duplicates are reported at the line of the second occurrence.
  std::vector<std::size_t> order(edges.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return edges[a] != edges[b] ? edges[a] < edges[b] : lines[a] < lines[b];
  });
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (edges[order[k]] == edges[order[k - 1]]) {
      throw IoError("duplicate edge " + std::to_string(edges[order[k]].first) + " " +
                        std::to_string(edges[order[k]].second),
                    lines[order[k]]);
    }
  }

  std::size_t n = any ? max_index + 1 : 0;
  if (n_hint) n = std::max(n, *n_hint);
  if (n == 0) throw IoError("graph has no nodes");
  return AttentionGraph(n, std::move(edges));
}

inline AttentionGraph load_graph(const std::filesystem::path& path,
                                 std::optional<std::size_t> n_hint = std::nullopt) {
  try {
    return parse_graph(read_text_file(path), n_hint);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline std::string format_graph(const AttentionGraph& g) {
  std::string out = "# n=" + std::to_string(g.n()) + " m=" + std::to_string(g.edge_count()) + "\n";
  for (const auto& [i, j] : g.edges()) {
    out += std::to_string(i);
    out += ' ';
    out += std::to_string(j);
    out += '\n';
  }
  return out;
}

inline void save_graph(const AttentionGraph& g, const std::filesystem::path& path) {
  write_text_file(path, format_graph(g));
}

// ---------------------------------------------------------------- features

/// Row-per-node numeric table (whitespace or comma separated).
inline FeatureMatrix parse_features(const std::string& text) {
  std::vector<double> values;
  std::size_t width = 0;
  std::size_t rows = 0;
  detail::for_each_line(text, [&](std::string_view raw, std::size_t line_no) {
    const auto body = detail::strip_comment(raw);
    if (body.empty()) return;
    const auto fields = detail::split_fields(body);
    if (rows == 0) {
      width = fields.size();
    } else if (fields.size() != width) {
      throw IoError("feature row " + std::to_string(rows) + " has " +
                        std::to_string(fields.size()) + " values, expected " +
                        std::to_string(width),
                    line_no);
    }
    for (const auto f : fields) {
      double v = 0.0;
      if (!detail::parse_number(f, v) || !std::isfinite(v))
        throw IoError("invalid number \"" + std::string(f) + "\"", line_no);
      values.push_back(v);
    }
    ++rows;
  });
  if (rows == 0) throw IoError("feature file has no rows");
  return FeatureMatrix(Matrix(rows, width, std::move(values)).transpose());
}

inline FeatureMatrix load_features(const std::filesystem::path& path) {
  try {
    return parse_features(read_text_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline std::string format_features(const Matrix& x) {
  std::string out;
  for (std::size_t node = 0; node < x.cols(); ++node) {
    for (std::size_t f = 0; f < x.rows(); ++f) {
      if (f) out.push_back(' ');
      detail::append_double(out, x(f, node));
    }
    out.push_back('\n');
  }
  return out;
}

inline void save_features(const Matrix& x, const std::filesystem::path& path) {
  write_text_file(path, format_features(x));
}

// ---------------------------------------------------------------- models

inline constexpr int kModelFormatVersion = 1;

inline std::string format_model(const Model& model) {
  validate_model(model);
  const auto audit = weight_audit(model);
  std::string out = "{\n";
  out += "  \"version\": " + std::to_string(kModelFormatVersion) + ",\n";
  out += "  \"d_in\": " + std::to_string(model.d_in) + ",\n";
  out += "  \"D\": " + std::to_string(model.D) + ",\n";
  out += "  \"L\": " + std::to_string(model.L()) + ",\n";
  out += std::string("  \"use_sqrt_d\": ") + (model.use_sqrt_d ? "true" : "false") + ",\n";
  out += "  \"activation\": \"relu\",\n";
  if (model.d) out += "  \"d\": " + std::to_string(*model.d) + ",\n";
  if (!model.method.empty()) out += "  \"method\": " + nlohmann::json(model.method).dump() + ",\n";
  if (!model.params.is_null()) out += "  \"params\": " + model.params.dump() + ",\n";
  out += "  \"layers\": [";
  for (std::size_t l = 0; l < model.L(); ++l) {
    const Layer& w = model.layers[l];
    out += l ? ",\n    {\n" : "\n    {\n";
    const std::pair<const char*, const Matrix*> mats[] = {
        {"W_V", &w.W_V}, {"W_Q", &w.W_Q}, {"W_K", &w.W_K}, {"W_1", &w.W_1}, {"W_2", &w.W_2}};
    for (std::size_t k = 0; k < 5; ++k) {
      out += std::string("      \"") + mats[k].first + "\": ";
      detail::append_matrix(out, *mats[k].second, "      ");
      out += (k < 4 || w.b_1) ? ",\n" : "\n";
    }
    if (w.b_1) {
      out += "      \"b_1\": ";
      detail::append_vector(out, *w.b_1);
      out += "\n";
    }
    out += "    }";
  }
  out += "\n  ],\n";
  if (model.U_out) {
    out += "  \"U_out\": ";
    detail::append_matrix(out, *model.U_out, "  ");
    out += ",\n";
  }
  // Informational; recomputed whenever the file is loaded.
  out += "  \"audit\": [";
  for (std::size_t l = 0; l < audit.size(); ++l) {
    const auto& a = audit[l];
    out += l ? ",\n    {" : "\n    {";
    const std::pair<const char*, double> norms[] = {
        {"W_V", a.W_V}, {"W_Q", a.W_Q}, {"W_K", a.W_K}, {"W_1", a.W_1}, {"W_2", a.W_2}};
    for (std::size_t k = 0; k < 5; ++k) {
      out += std::string(k ? ", \"" : "\"") + norms[k].first + "\": ";
      detail::append_double(out, norms[k].second);
    }
    out += "}";
  }
  out += "\n  ]\n}\n";
  return out;
}

inline ModelFile parse_model(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw IoError("model file must be a JSON object");
  static const char* const kKnown[] = {"version", "d_in",   "D",      "L",     "use_sqrt_d",
                                       "activation", "layers", "d",      "U_out", "method",
                                       "params",  "audit"};
  for (const auto& item : doc.items()) {
    if (std::find_if(std::begin(kKnown), std::end(kKnown),
                     [&](const char* k) { return item.key() == k; }) == std::end(kKnown))
      throw IoError("unknown model key \"" + item.key() + "\"");
  }
  if (!doc.contains("version") || !doc["version"].is_number_integer() ||
      doc["version"].get<int>() != kModelFormatVersion) {
    throw IoError("unsupported model version (expected " + std::to_string(kModelFormatVersion) + ")");
  }
  if (doc.contains("activation") &&
      (!doc["activation"].is_string() || doc["activation"].get<std::string>() != "relu")) {
    throw IoError("unknown activation " + doc["activation"].dump() + " (only \"relu\" is supported)");
  }

  Model m;
  m.d_in = detail::json_count(doc, "d_in");
  m.D = detail::json_count(doc, "D");
  const std::size_t L = detail::json_count(doc, "L");
  if (doc.contains("use_sqrt_d")) {
    if (!doc["use_sqrt_d"].is_boolean()) throw IoError("\"use_sqrt_d\" must be a boolean");
    m.use_sqrt_d = doc["use_sqrt_d"].get<bool>();
  }
  if (doc.contains("d")) m.d = detail::json_count(doc, "d");
  if (doc.contains("method")) {
    if (!doc["method"].is_string()) throw IoError("\"method\" must be a string");
    m.method = doc["method"].get<std::string>();
  }
  if (doc.contains("params")) m.params = doc["params"];

  if (!doc.contains("layers") || !doc["layers"].is_array())
    throw IoError("model file missing \"layers\" array");
  const auto& layers = doc["layers"];
  if (layers.size() != L) {
    throw IoError("\"L\" is " + std::to_string(L) + " but " + std::to_string(layers.size()) +
                  " layers are present");
  }
  for (std::size_t l = 0; l < L; ++l) {
    const auto& lj = layers[l];
    const std::string where = "layer " + std::to_string(l) + " ";
    if (!lj.is_object()) throw IoError(where + "must be an object");
    for (const auto& item : lj.items()) {
      static const char* const kLayerKeys[] = {"W_V", "W_Q", "W_K", "W_1", "W_2", "b_1"};
      if (std::find_if(std::begin(kLayerKeys), std::end(kLayerKeys),
                       [&](const char* k) { return item.key() == k; }) == std::end(kLayerKeys))
        throw IoError(where + "has unknown key \"" + item.key() + "\"");
    }
    Layer layer;
    for (auto [key, slot] : {std::pair{"W_V", &layer.W_V}, {"W_Q", &layer.W_Q},
                             {"W_K", &layer.W_K}, {"W_1", &layer.W_1}, {"W_2", &layer.W_2}}) {
      if (!lj.contains(key)) throw IoError(where + "missing " + key);
      *slot = detail::json_matrix(lj[key], where + key);
    }
    if (lj.contains("b_1") && !lj["b_1"].is_null()) layer.b_1 = detail::json_vector(lj["b_1"], where + "b_1");
    m.layers.push_back(std::move(layer));
  }
  if (doc.contains("U_out") && !doc["U_out"].is_null()) m.U_out = detail::json_matrix(doc["U_out"], "U_out");

  try {
    validate_model(m);
  } catch (const ValidationError& e) {
    throw IoError(std::string("inconsistent model: ") + e.what());
  }
  ModelFile file;
  file.audit = weight_audit(m);
  file.model = std::move(m);
  return file;
}

inline ModelFile load_model(const std::filesystem::path& path) {
  try {
    return parse_model(read_text_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void save_model(const Model& model, const std::filesystem::path& path) {
  write_text_file(path, format_model(model));
}

}  // namespace gtc
