#pragma once

#include "ijcov/estimators.hpp"
#include "ijcov/model.hpp"
#include "ijcov/sample.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ijcov {

inline constexpr int kSchemaVersion = 1;

/// Shortest decimal form that reads back to the same double.
std::string format_double(double value);

/// Parses a finite decimal float; the whole field must be consumed.
std::optional<double> parse_double(std::string_view field);

struct CsvTable {
  std::vector<std::string> header;
  Matrix values;
};

/// Numeric CSV with a header row. Errors cite 1-based data row numbers.
CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(const std::string& text, const std::string& source);
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const Matrix& values);
std::string to_csv(const std::vector<std::string>& header, const Matrix& values);

Dataset read_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, const Dataset& data);

/// Which draws-file columns hold g.
struct GSelector {
  std::optional<std::size_t> last_k;           // --g-cols k: the last k columns
  std::vector<std::string> names_or_indices;   // --g-expr: parameter names or 0-based indices
};

struct DrawsFile {
  std::vector<std::string> param_names;
  std::vector<std::string> g_names;
  Matrix params;
  Matrix g;
};

/// `draw,<params>[,g_...]`; g columns are those prefixed `g_` unless a
/// selector overrides. The draw column must be strictly increasing integers.
DrawsFile read_draws(const std::filesystem::path& path, const GSelector& selector = {});

/// `draw,ll_1,...,ll_N`.
Matrix read_loglik(const std::filesystem::path& path);

/// Validated sample from a draws file and a loglik file with equal row counts.
PosteriorSample read_sample(const std::filesystem::path& draws_path,
                            const std::filesystem::path& loglik_path,
                            const GSelector& selector = {});

void write_draws(const std::filesystem::path& path, const PosteriorSample& sample,
                 const std::vector<std::string>& param_names,
                 const std::vector<std::string>& g_names);
void write_loglik(const std::filesystem::path& path, const Matrix& loglik);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

nlohmann::json estimate_to_json(const CovEstimate& est);
CovEstimate estimate_from_json(const nlohmann::json& j);

/// {"schema_version", "n", "g_names", "estimates": [...]}.
struct EstimateSet {
  std::size_t n = 0;
  std::vector<std::string> g_names;
  std::vector<CovEstimate> estimates;

  const CovEstimate* find(CovEstimate::Method method) const;
};

nlohmann::json estimate_set_to_json(const EstimateSet& set);
EstimateSet estimate_set_from_json(const nlohmann::json& j);

nlohmann::json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace ijcov
