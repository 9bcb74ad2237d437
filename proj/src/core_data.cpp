#include "tmlesi/core_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace tmlesi {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double parse_named(const std::string& body, const std::string& key, double fallback) {
  std::istringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) continue;
    if (trim(item.substr(0, eq)) != key) continue;
    const auto v = parse_double(trim(item.substr(eq + 1)));
    if (!v) throw ParseError("bad value for '" + key + "' in '" + body + "'");
    return *v;
  }
  return fallback;
}

}  // namespace

Eigen::Index Sample::covariate_index(const std::string& name) const {
  const auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
  return it == covariate_names.end() ? -1 : static_cast<Eigen::Index>(it - covariate_names.begin());
}

void validate(const Sample& s) {
  const auto n = s.outcome.size();
  if (s.exposure.size() != n || s.covariates.rows() != n)
    throw ParseError("sample dimensions disagree: covariates " + std::to_string(s.covariates.rows()) +
                     ", exposure " + std::to_string(s.exposure.size()) + ", outcome " +
                     std::to_string(n));
  if (static_cast<std::size_t>(s.covariates.cols()) != s.covariate_names.size())
    throw ParseError("covariate names do not match covariate columns");
  if (n < 2) throw ParseError("sample has n=" + std::to_string(n) + " < 2");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (s.exposure[i] != 0.0 && s.exposure[i] != 1.0)
      throw ParseError("exposure not binary at row " + std::to_string(i + 1));
    if (!std::isfinite(s.outcome[i]))
      throw ParseError("outcome not finite at row " + std::to_string(i + 1));
  }
}

Sample make_sample(std::vector<std::string> covariate_names, Eigen::MatrixXd covariates,
                   Eigen::VectorXd exposure, Eigen::VectorXd outcome,
                   std::optional<std::string> group_id) {
  Sample s;
  s.covariate_names = std::move(covariate_names);
  s.covariates = std::move(covariates);
  s.exposure = std::move(exposure);
  s.outcome = std::move(outcome);
  s.group_id = std::move(group_id);
  validate(s);
  return s;
}

Sample permute_rows(const Sample& sample, const std::vector<Eigen::Index>& perm) {
  Sample out = sample;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const auto src = perm[i];
    out.covariates.row(static_cast<Eigen::Index>(i)) = sample.covariates.row(src);
    out.exposure[static_cast<Eigen::Index>(i)] = sample.exposure[src];
    out.outcome[static_cast<Eigen::Index>(i)] = sample.outcome[src];
  }
  return out;
}

// ---------------------------------------------------------------------------

KnSpec parse_kn(const std::string& text) {
  const auto t = trim(text);
  if (t == "identity") return KnIdentity{};
  if (t == "count") return KnCount{};
  if (t.rfind("affine", 0) == 0) {
    const auto colon = t.find(':');
    const std::string body = colon == std::string::npos ? "" : t.substr(colon + 1);
    return KnAffine{parse_named(body, "slope", 1.0), parse_named(body, "intercept", 0.0)};
  }
  throw ParseError("unknown k_n specification '" + text + "'");
}

std::string to_string(const KnSpec& kn) {
  if (std::holds_alternative<KnIdentity>(kn)) return "identity";
  if (std::holds_alternative<KnCount>(kn)) return "count";
  const auto& a = std::get<KnAffine>(kn);
  std::ostringstream ss;
  ss << std::setprecision(17) << "affine:slope=" << a.slope << ",intercept=" << a.intercept;
  return ss.str();
}

ExposureSummary exposure_summary(const Sample& sample, const KnSpec& kn) {
  ExposureSummary out;
  out.n = sample.size();
  for (Eigen::Index i = 0; i < out.n; ++i) out.s_n += sample.exposure[i] == 1.0 ? 1 : 0;
  if (out.s_n == 0 || out.s_n == out.n)
    throw EstimationError("degenerate exposure proportion (" + std::to_string(out.s_n) + " of " +
                          std::to_string(out.n) + " exposed)");
  out.a_bar = static_cast<double>(out.s_n) / static_cast<double>(out.n);
  if (std::holds_alternative<KnIdentity>(kn)) {
    out.k_value = out.a_bar;
  } else if (std::holds_alternative<KnCount>(kn)) {
    out.k_value = static_cast<double>(out.s_n);
  } else {
    const auto& a = std::get<KnAffine>(kn);
    out.k_value = a.intercept + a.slope * out.a_bar;
    if (!(out.k_value >= 0.0 && out.k_value <= 1.0))
      throw EstimationError("affine k_n maps a_bar=" + std::to_string(out.a_bar) +
                            " outside [0,1]: " + std::to_string(out.k_value));
  }
  return out;
}

// ---------------------------------------------------------------------------

ScaledSample scale_outcome(const Sample& sample, std::optional<OutcomeScale> bounds) {
  OutcomeScale scale;
  if (bounds) {
    scale = *bounds;
    if (!(scale.lower < scale.upper))
      throw ParseError("outcome bounds require lower < upper");
    for (Eigen::Index i = 0; i < sample.size(); ++i) {
      const double y = sample.outcome[i];
      if (y < scale.lower || y > scale.upper)
        throw ParseError("outcome " + std::to_string(y) + " at row " + std::to_string(i + 1) +
                         " outside bounds [" + std::to_string(scale.lower) + ", " +
                         std::to_string(scale.upper) + "]");
    }
  } else {
    scale.lower = sample.outcome.minCoeff();
    scale.upper = sample.outcome.maxCoeff();
    if (!(scale.lower < scale.upper))
      throw EstimationError("constant outcome cannot be auto-scaled");
  }
  ScaledSample out{sample, scale};
  const double width = scale.width();
  out.sample.outcome = ((sample.outcome.array() - scale.lower) / width).matrix();
  return out;
}

Eigen::VectorXd unscale_outcome(const Eigen::VectorXd& scaled, const OutcomeScale& scale) {
  return (scale.lower + scale.width() * scaled.array()).matrix();
}

// ---------------------------------------------------------------------------

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(trim(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(trim(cur));
  return cells;
}

std::optional<double> parse_double(const std::string& cell) {
  const auto t = trim(cell);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

LoadedSamples parse_samples(std::istream& in, const CsvSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty CSV: header required");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line);

  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> cov_cols;
  for (const auto& c : schema.covariates) cov_cols.push_back(column(c));
  const auto a_col = column(schema.exposure);
  const auto y_col = column(schema.outcome);
  const std::optional<std::size_t> g_col =
      schema.group ? std::optional<std::size_t>(column(*schema.group)) : std::nullopt;

  struct Rows {
    std::vector<std::vector<double>> w;
    std::vector<double> a, y;
  };
  std::vector<std::string> order;
  std::map<std::string, Rows> groups;

  auto numeric = [&](const std::vector<std::string>& cells, std::size_t col, std::size_t row) {
    const auto v = parse_double(cells[col]);
    if (!v || !std::isfinite(*v))
      throw ParseError("non-numeric cell at row " + std::to_string(row) + ", column '" +
                       header[col] + "': '" + cells[col] + "'");
    return *v;
  };

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(header.size()));
    const std::string key = g_col ? cells[*g_col] : std::string();
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    Rows& r = it->second;

    std::vector<double> w;
    for (const auto c : cov_cols) w.push_back(numeric(cells, c, row));
    const auto& a_cell = cells[a_col];
    int a_int = -1;
    const auto [ptr, ec] = std::from_chars(a_cell.data(), a_cell.data() + a_cell.size(), a_int);
    if (ec != std::errc() || ptr != a_cell.data() + a_cell.size() || (a_int != 0 && a_int != 1))
      throw ParseError("exposure not binary at row " + std::to_string(row) + " (column '" +
                       schema.exposure + "' = '" + a_cell + "')");
    r.w.push_back(std::move(w));
    r.a.push_back(a_int);
    r.y.push_back(numeric(cells, y_col, row));
  }

  LoadedSamples out;
  for (const auto& key : order) {
    const Rows& r = groups.at(key);
    const auto n = static_cast<Eigen::Index>(r.a.size());
    const std::string label = g_col ? key : std::string("<all>");
    if (n < 2) {
      out.rejected.emplace_back(label, "group has n=" + std::to_string(n) + " < 2");
      continue;
    }
    Eigen::MatrixXd w(n, static_cast<Eigen::Index>(cov_cols.size()));
    Eigen::VectorXd a(n), y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = r.w[i][j];
      a[i] = r.a[i];
      y[i] = r.y[i];
    }
    Sample s = make_sample(schema.covariates, std::move(w), std::move(a), std::move(y),
                           g_col ? std::optional<std::string>(key) : std::nullopt);
    s.exposure_name = schema.exposure;
    s.outcome_name = schema.outcome;
    out.samples.push_back(std::move(s));
  }
  if (row == 0) throw ParseError("CSV has a header but no data rows");
  return out;
}

LoadedSamples load_samples(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return parse_samples(in, schema);
}

Sample load_sample(const std::string& path, const CsvSchema& schema) {
  auto loaded = load_samples(path, schema);
  if (!loaded.rejected.empty())
    throw ParseError("group '" + loaded.rejected.front().first + "': " +
                     loaded.rejected.front().second);
  if (loaded.samples.size() != 1)
    throw ParseError("expected a single group, found " + std::to_string(loaded.samples.size()));
  return std::move(loaded.samples.front());
}

void write_sample(std::ostream& out, const Sample& s) {
  const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& name : s.covariate_names) out << name << ',';
  out << s.exposure_name << ',' << s.outcome_name << '\n';
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    for (Eigen::Index j = 0; j < s.covariates.cols(); ++j) out << s.covariates(i, j) << ',';
    out << static_cast<int>(s.exposure[i]) << ',' << s.outcome[i] << '\n';
  }
  out.precision(old_precision);
}

}  // namespace tmlesi
