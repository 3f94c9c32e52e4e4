#include "ijcov/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace ijcov {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_double(std::string_view field) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) {
    field.remove_suffix(1);
  }
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  if (field.empty()) return std::nullopt;
  double value = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) return std::nullopt;
  if (!std::isfinite(value)) return std::nullopt;
  return value;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write '" + path.string() + "'");
  out << text;
  require(static_cast<bool>(out), "write failed for '" + path.string() + "'");
}

}  // namespace

CsvTable parse_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  CsvTable table;
  bool have_header = false;
  std::vector<double> flat;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_line(line);
    if (!have_header) {
      if (!fields.empty() && fields[0].size() >= 3 &&
          static_cast<unsigned char>(fields[0][0]) == 0xEF) {
        fields[0] = fields[0].substr(3);  // UTF-8 byte order mark
      }
      table.header = fields;
      have_header = true;
      continue;
    }
    ++row;
    if (fields.size() != table.header.size()) {
      fail(ErrorKind::parse, source + ": row " + std::to_string(row) + " has " +
                                 std::to_string(fields.size()) + " fields, header has " +
                                 std::to_string(table.header.size()));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto v = parse_double(fields[c]);
      if (!v) {
        fail(ErrorKind::parse, source + ": row " + std::to_string(row) + ", column '" +
                                   table.header[c] + "': not a finite number ('" + fields[c] +
                                   "')");
      }
      flat.push_back(*v);
    }
  }
  require(have_header, source + ": missing header row", ErrorKind::parse);
  const auto cols = static_cast<Eigen::Index>(table.header.size());
  table.values = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                Eigen::RowMajor>>(flat.data(),
                                                                  static_cast<Eigen::Index>(row),
                                                                  cols);
  return table;
}

CsvTable read_csv(const fs::path& path) { return parse_csv(read_file(path), path.string()); }

std::string to_csv(const std::vector<std::string>& header, const Matrix& values) {
  require(static_cast<Eigen::Index>(header.size()) == values.cols(),
          "CSV header width differs from the matrix", ErrorKind::dimension_mismatch);
  std::string out;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c) out += ',';
    out += header[c];
  }
  out += '\n';
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (c) out += ',';
      out += format_double(values(r, c));
    }
    out += '\n';
  }
  return out;
}

void write_csv(const fs::path& path, const std::vector<std::string>& header, const Matrix& values) {
  write_file(path, to_csv(header, values));
}

Dataset read_dataset(const fs::path& path) {
  const CsvTable t = read_csv(path);
  require(t.values.rows() >= 2, path.string() + ": a dataset needs N >= 2 rows", ErrorKind::parse);
  std::vector<double> flat(static_cast<std::size_t>(t.values.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      flat.data(), t.values.rows(), t.values.cols()) = t.values;
  return Dataset(t.header, std::move(flat));
}

void write_dataset(const fs::path& path, const Dataset& data) {
  Matrix values(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(data.width()));
  for (std::size_t n = 0; n < data.size(); ++n) {
    for (std::size_t c = 0; c < data.width(); ++c) {
      values(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c)) = data.at(n, c);
    }
  }
  write_csv(path, data.columns(), values);
}

namespace {

void check_draw_column(const CsvTable& t, const std::string& source) {
  require(!t.header.empty() && t.header[0] == "draw",
          source + ": first column must be 'draw'", ErrorKind::parse);
  require(t.values.rows() >= 2, source + ": need at least 2 draws", ErrorKind::parse);
  for (Eigen::Index r = 0; r < t.values.rows(); ++r) {
    const double d = t.values(r, 0);
    if (d != std::floor(d)) {
      fail(ErrorKind::parse, source + ": row " + std::to_string(r + 1) +
                                 ": draw index is not an integer");
    }
    if (r > 0 && d <= t.values(r - 1, 0)) {
      fail(ErrorKind::parse, source + ": row " + std::to_string(r + 1) + ": draw index " +
                                 format_double(d) +
                                 (d == t.values(r - 1, 0) ? " duplicates the previous row"
                                                          : " is not increasing"));
    }
  }
}

bool is_index(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

}  // namespace

DrawsFile read_draws(const fs::path& path, const GSelector& selector) {
  const std::string source = path.string();
  const CsvTable t = read_csv(path);
  check_draw_column(t, source);
  const std::size_t width = t.header.size() - 1;
  require(width >= 1, source + ": no parameter columns", ErrorKind::parse);

  std::vector<std::size_t> param_cols;
  std::vector<std::size_t> g_cols;
  if (selector.last_k) {
    const std::size_t k = *selector.last_k;
    require(k >= 1 && k <= width, source + ": --g-cols must be in [1, " + std::to_string(width) + "]");
    for (std::size_t c = 1; c <= width; ++c) (c > width - k ? g_cols : param_cols).push_back(c);
  } else {
    for (std::size_t c = 1; c <= width; ++c) {
      (t.header[c].rfind("g_", 0) == 0 ? g_cols : param_cols).push_back(c);
    }
    if (!selector.names_or_indices.empty()) {
      g_cols.clear();
      for (const auto& key : selector.names_or_indices) {
        std::size_t col = 0;
        if (is_index(key)) {
          const std::size_t idx = std::stoul(key);
          require(idx < param_cols.size(), source + ": --g-expr index " + key + " out of range");
          col = param_cols[idx];
        } else {
          const auto it = std::find(t.header.begin() + 1, t.header.end(), key);
          require(it != t.header.end(), source + ": --g-expr names unknown column '" + key + "'");
          col = static_cast<std::size_t>(it - t.header.begin());
        }
        g_cols.push_back(col);
      }
    }
  }
  require(!g_cols.empty(), source + ": no g columns; name them g_* or pass --g-cols / --g-expr");

  DrawsFile out;
  out.params.resize(t.values.rows(), static_cast<Eigen::Index>(param_cols.size()));
  out.g.resize(t.values.rows(), static_cast<Eigen::Index>(g_cols.size()));
  for (std::size_t i = 0; i < param_cols.size(); ++i) {
    out.param_names.push_back(t.header[param_cols[i]]);
    out.params.col(static_cast<Eigen::Index>(i)) = t.values.col(static_cast<Eigen::Index>(param_cols[i]));
  }
  for (std::size_t i = 0; i < g_cols.size(); ++i) {
    out.g_names.push_back(t.header[g_cols[i]]);
    out.g.col(static_cast<Eigen::Index>(i)) = t.values.col(static_cast<Eigen::Index>(g_cols[i]));
  }
  return out;
}

Matrix read_loglik(const fs::path& path) {
  const CsvTable t = read_csv(path);
  check_draw_column(t, path.string());
  require(t.header.size() >= 2, path.string() + ": no log-likelihood columns", ErrorKind::parse);
  return t.values.rightCols(t.values.cols() - 1);
}

PosteriorSample read_sample(const fs::path& draws_path, const fs::path& loglik_path,
                            const GSelector& selector) {
  DrawsFile d = read_draws(draws_path, selector);
  Matrix ll = read_loglik(loglik_path);
  if (ll.rows() != d.g.rows()) {
    fail(ErrorKind::parse, "row-count mismatch: " + draws_path.string() + " has " +
                               std::to_string(d.g.rows()) + " draws, " + loglik_path.string() +
                               " has " + std::to_string(ll.rows()));
  }
  PosteriorSample s;
  s.draws = std::move(d.params);
  s.g_values = std::move(d.g);
  s.loglik = std::move(ll);
  s.meta.sampler = "file";
  s.validate();
  return s;
}

void write_draws(const fs::path& path, const PosteriorSample& sample,
                 const std::vector<std::string>& param_names,
                 const std::vector<std::string>& g_names) {
  const Eigen::Index m = sample.g_values.rows();
  const Eigen::Index d = sample.draws.cols();
  const Eigen::Index q = sample.g_values.cols();
  require(static_cast<Eigen::Index>(param_names.size()) == d &&
              static_cast<Eigen::Index>(g_names.size()) == q,
          "column names do not match the sample", ErrorKind::dimension_mismatch);
  std::vector<std::string> header{"draw"};
  header.insert(header.end(), param_names.begin(), param_names.end());
  for (const auto& g : g_names) header.push_back(g.rfind("g_", 0) == 0 ? g : "g_" + g);
  Matrix values(m, 1 + d + q);
  values.col(0) = Vector::LinSpaced(m, 0.0, static_cast<double>(m - 1));
  if (d > 0) values.middleCols(1, d) = sample.draws;
  values.rightCols(q) = sample.g_values;
  write_csv(path, header, values);
}

void write_loglik(const fs::path& path, const Matrix& loglik) {
  std::vector<std::string> header{"draw"};
  for (Eigen::Index n = 0; n < loglik.cols(); ++n) header.push_back("ll_" + std::to_string(n + 1));
  Matrix values(loglik.rows(), loglik.cols() + 1);
  values.col(0) = Vector::LinSpaced(loglik.rows(), 0.0, static_cast<double>(loglik.rows() - 1));
  values.rightCols(loglik.cols()) = loglik;
  write_csv(path, header, values);
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      if (std::isfinite(v)) {
        row.push_back(v);
      } else if (std::isinf(v)) {
        row.push_back(v > 0 ? "inf" : "-inf");
      } else {
        row.push_back(nullptr);
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j) {
  require(j.is_array() && !j.empty(), "matrix must be a non-empty array of rows", ErrorKind::parse);
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j[static_cast<std::size_t>(i)];
    require(row.is_array() && static_cast<Eigen::Index>(row.size()) == cols,
            "matrix rows differ in length", ErrorKind::parse);
    for (Eigen::Index c = 0; c < cols; ++c) {
      const json& v = row[static_cast<std::size_t>(c)];
      if (v.is_number()) {
        m(i, c) = v.get<double>();
      } else if (v.is_string() && (v == "inf" || v == "-inf")) {
        m(i, c) = v == "inf" ? std::numeric_limits<double>::infinity()
                             : -std::numeric_limits<double>::infinity();
      } else if (v.is_null()) {
        m(i, c) = std::numeric_limits<double>::quiet_NaN();
      } else {
        fail(ErrorKind::parse, "matrix entry is not a number");
      }
    }
  }
  return m;
}

json estimate_to_json(const CovEstimate& est) {
  json j;
  j["method"] = method_name(est.method);
  j["v"] = matrix_to_json(est.v);
  j["se"] = est.se ? matrix_to_json(*est.se) : json(nullptr);
  j["sample_size"] = est.sample_size;
  return j;
}

CovEstimate estimate_from_json(const json& j) {
  require(j.is_object() && j.contains("method") && j.contains("v"),
          "estimate needs 'method' and 'v'", ErrorKind::parse);
  CovEstimate est;
  est.method = parse_method(j.at("method").get<std::string>());
  est.v = matrix_from_json(j.at("v"));
  if (j.contains("se") && !j.at("se").is_null()) est.se = matrix_from_json(j.at("se"));
  est.sample_size = j.value("sample_size", std::size_t{0});
  return est;
}

const CovEstimate* EstimateSet::find(CovEstimate::Method method) const {
  for (const auto& e : estimates) {
    if (e.method == method) return &e;
  }
  return nullptr;
}

json estimate_set_to_json(const EstimateSet& set) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["n"] = set.n;
  j["g_names"] = set.g_names;
  j["estimates"] = json::array();
  for (const auto& e : set.estimates) j["estimates"].push_back(estimate_to_json(e));
  return j;
}

EstimateSet estimate_set_from_json(const json& j) {
  require(j.is_object(), "estimates file must hold a JSON object", ErrorKind::parse);
  const int version = j.value("schema_version", 0);
  require(version == kSchemaVersion,
          "unsupported schema_version " + std::to_string(version) + " (expected " +
              std::to_string(kSchemaVersion) + ")",
          ErrorKind::parse);
  EstimateSet set;
  set.n = j.value("n", std::size_t{0});
  if (j.contains("g_names")) set.g_names = j.at("g_names").get<std::vector<std::string>>();
  require(j.contains("estimates") && j.at("estimates").is_array(), "missing 'estimates' array",
          ErrorKind::parse);
  for (const auto& e : j.at("estimates")) set.estimates.push_back(estimate_from_json(e));
  return set;
}

json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::parse, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) { write_file(path, text); }

}  // namespace ijcov
