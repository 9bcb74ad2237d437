#include "tmlesi/msm.hpp"

#include "tmlesi/estimators.hpp"
#include "tmlesi/normal.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tmlesi {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

constexpr const char* kCaveat =
    "descriptive projection across groups; a causal reading in k requires the modifiers to "
    "control confounding between A-bar and the group effects";

}  // namespace

MsmWeighting parse_weighting(const std::string& text) {
  if (text == "invvar" || text == "inverse_variance") return MsmWeighting::InverseVariance;
  if (text == "uniform") return MsmWeighting::Uniform;
  throw ParseError("unknown MSM weighting '" + text + "' (expected invvar or uniform)");
}

std::vector<std::string> MsmFormula::labels() const {
  std::vector<std::string> out;
  if (intercept) out.emplace_back("(Intercept)");
  for (const auto& t : terms) {
    std::string s = t.front();
    for (std::size_t i = 1; i < t.size(); ++i) s += ":" + t[i];
    out.push_back(s);
  }
  return out;
}

MsmFormula parse_msm_formula(const std::string& text) {
  std::string rhs = text;
  if (const auto tilde = rhs.find('~'); tilde != std::string::npos) rhs = rhs.substr(tilde + 1);
  rhs.erase(std::remove_if(rhs.begin(), rhs.end(), [](unsigned char c) { return std::isspace(c); }),
            rhs.end());
  for (auto pos = rhs.find("-1"); pos != std::string::npos; pos = rhs.find("-1")) rhs.replace(pos, 2, "+0");
  rhs = trim(rhs);
  if (!rhs.empty() && rhs.front() == '+') rhs.erase(0, 1);
  MsmFormula f;
  std::istringstream ss(rhs);
  std::string token;
  bool any = false;
  while (std::getline(ss, token, '+')) {
    token = trim(token);
    if (token.empty()) throw ParseError("empty term in MSM formula '" + text + "'");
    any = true;
    if (token == "1") continue;
    if (token == "0") {
      f.intercept = false;
      continue;
    }
    std::vector<std::string> vars;
    std::istringstream ts(token);
    std::string v;
    while (std::getline(ts, v, ':')) {
      v = trim(v);
      if (v.empty()) throw ParseError("bad term '" + token + "' in MSM formula '" + text + "'");
      vars.push_back(v);
    }
    f.terms.push_back(std::move(vars));
  }
  if (!any) throw ParseError("MSM formula '" + text + "' is empty");
  if (!f.intercept && f.terms.empty()) throw ParseError("MSM formula '" + text + "' has no terms");
  return f;
}

Eigen::MatrixXd build_design(const std::vector<GroupEffect>& effects, const MsmFormula& formula) {
  const auto rows = static_cast<Eigen::Index>(effects.size());
  const auto cols = static_cast<Eigen::Index>(formula.terms.size()) + (formula.intercept ? 1 : 0);
  if (rows < cols)
    throw EstimationError("MSM needs at least as many groups (" + std::to_string(rows) +
                          ") as coefficients (" + std::to_string(cols) + ")");
  Eigen::MatrixXd x(rows, cols);
  for (Eigen::Index j = 0; j < rows; ++j) {
    const auto& e = effects[static_cast<std::size_t>(j)];
    Eigen::Index c = 0;
    if (formula.intercept) x(j, c++) = 1.0;
    for (const auto& term : formula.terms) {
      double value = 1.0;
      for (const auto& v : term) {
        const auto it = e.modifiers.find(v);
        if (it == e.modifiers.end())
          throw ParseError("group '" + e.group_id + "' has no modifier '" + v + "'");
        value *= it->second;
      }
      x(j, c++) = value;
    }
  }
  return x;
}

MsmFit fit_msm(const std::vector<GroupEffect>& effects, const MsmFormula& formula,
               MsmWeighting weighting) {
  const Eigen::MatrixXd x = build_design(effects, formula);
  const auto j_count = x.rows();
  Eigen::VectorXd psi(j_count), var(j_count), w(j_count);
  for (Eigen::Index j = 0; j < j_count; ++j) {
    const auto& e = effects[static_cast<std::size_t>(j)];
    psi[j] = e.psi_hat;
    var[j] = e.variance;
    if (weighting == MsmWeighting::InverseVariance) {
      if (!(e.variance > 0.0))
        throw EstimationError("group '" + e.group_id +
                              "' needs a positive variance for inverse-variance weights");
      w[j] = 1.0 / e.variance;
    } else {
      if (!(e.variance >= 0.0))
        throw EstimationError("group '" + e.group_id + "' has a negative variance");
      w[j] = 1.0;
    }
  }
  const Eigen::MatrixXd xtw = x.transpose() * w.asDiagonal();
  const Eigen::MatrixXd info = xtw * x;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(info);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) throw EstimationError("singular MSM design (X'WX not invertible)");
  const Eigen::MatrixXd bread = lu.inverse();

  MsmFit fit;
  fit.beta = lu.solve(xtw * psi);
  fit.covariance = bread * (xtw * var.asDiagonal() * xtw.transpose()) * bread;
  fit.covariance = 0.5 * (fit.covariance + fit.covariance.transpose()).eval();
  fit.design_description = formula.labels();
  fit.weights_used = w;
  fit.weighting = weighting;
  fit.caveat = kCaveat;
  return fit;
}

std::vector<MsmCoefficient> MsmFit::coefficients(double ci_level) const {
  std::vector<MsmCoefficient> out;
  for (Eigen::Index k = 0; k < beta.size(); ++k) {
    MsmCoefficient c;
    c.term = design_description[static_cast<std::size_t>(k)];
    c.estimate = beta[k];
    c.se = std::sqrt(std::max(covariance(k, k), 0.0));
    c.z = c.se > 0.0 ? c.estimate / c.se : 0.0;
    c.p_value = c.se > 0.0 ? 2.0 * normal_cdf(-std::abs(c.z)) : 1.0;
    c.ci = wald_ci(c.estimate, c.se, ci_level);
    out.push_back(c);
  }
  return out;
}

std::vector<GroupEffect> load_group_effects(const std::string& path, const std::string& target) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open effects file '" + path + "'");
  std::string line;
  // Leading '#' lines carry the producing run's configuration.
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.front() == '#') continue;
    have_header = true;
    break;
  }
  if (!have_header) throw ParseError("effects file '" + path + "' is empty");
  const auto header = split_csv_line(line);
  auto find = [&](const std::string& name) -> long {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<long>(it - header.begin());
  };
  const long gid = find("group_id"), psi = find("psi_hat"), var = find("variance"),
             tgt = find("target");
  if (gid < 0 || psi < 0 || var < 0)
    throw ParseError("effects file needs columns group_id, psi_hat, variance");

  std::vector<GroupEffect> out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty() || line.front() == '#') continue;
    ++row;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError("effects row " + std::to_string(row) + " has the wrong number of cells");
    if (!target.empty() && tgt >= 0 && cells[static_cast<std::size_t>(tgt)] != target) continue;
    GroupEffect e;
    e.group_id = cells[static_cast<std::size_t>(gid)];
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (static_cast<long>(c) == gid || static_cast<long>(c) == tgt) continue;
      const auto v = parse_double(cells[c]);
      if (!v)
        throw ParseError("non-numeric cell at effects row " + std::to_string(row) + ", column '" +
                         header[c] + "'");
      if (static_cast<long>(c) == psi) e.psi_hat = *v;
      else if (static_cast<long>(c) == var) e.variance = *v;
      else e.modifiers[header[c]] = *v;
    }
    out.push_back(std::move(e));
  }
  return out;
}

nlohmann::json to_json(const MsmFit& fit, double ci_level) {
  nlohmann::json j;
  j["weighting"] = fit.weighting == MsmWeighting::InverseVariance ? "invvar" : "uniform";
  j["caveat"] = fit.caveat;
  j["coefficients"] = nlohmann::json::array();
  for (const auto& c : fit.coefficients(ci_level)) {
    j["coefficients"].push_back({{"term", c.term},
                                 {"estimate", c.estimate},
                                 {"se", c.se},
                                 {"z", c.z},
                                 {"p_value", c.p_value},
                                 {"ci", {c.ci.first, c.ci.second}}});
  }
  std::vector<std::vector<double>> cov;
  for (Eigen::Index r = 0; r < fit.covariance.rows(); ++r) {
    cov.emplace_back();
    for (Eigen::Index c = 0; c < fit.covariance.cols(); ++c) cov.back().push_back(fit.covariance(r, c));
  }
  j["covariance"] = cov;
  return j;
}

}  // namespace tmlesi
