#include "tmlesi/interventions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace tmlesi {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::pair<std::string, std::string>> key_values(const std::string& body,
                                                            const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value in intervention '" + text + "'");
    out.emplace_back(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
  }
  return out;
}

Eigen::VectorXd read_marginals(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open marginals file '" + path + "'");
  std::vector<double> values;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto v = parse_double(line);
    if (!v) {
      if (first) {
        first = false;
        continue;  // header
      }
      throw ParseError("non-numeric marginal '" + line + "' in '" + path + "'");
    }
    first = false;
    values.push_back(*v);
  }
  return Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

InterventionSpec parse_intervention(const std::string& raw) {
  const auto text = trim(raw);
  const auto colon = text.find(':');
  const auto head = trim(text.substr(0, colon));
  const std::string body = colon == std::string::npos ? "" : text.substr(colon + 1);

  if (head == "all_treat" && body.empty()) return AllTreat{};
  if (head == "all_control" && body.empty()) return AllControl{};
  if (head == "complete_randomization" && body.empty()) return CompleteRandomization{};
  if (head == "rank_top_s") {
    RankTopS r;
    for (const auto& [k, v] : key_values(body, text)) {
      if (k == "score") r.score = v;
      else if (k == "direction" && (v == "desc" || v == "descending")) r.descending = true;
      else if (k == "direction" && (v == "asc" || v == "ascending")) r.descending = false;
      else throw ParseError("unknown option '" + k + "=" + v + "' in intervention '" + text + "'");
    }
    if (r.score.empty()) throw ParseError("rank_top_s needs score=<column>: '" + text + "'");
    return r;
  }
  if (head == "bernoulli") {
    Bernoulli b{-1.0};
    for (const auto& [k, v] : key_values(body, text)) {
      const auto p = parse_double(v);
      if (k != "p" || !p) throw ParseError("bad option in intervention '" + text + "'");
      b.p = *p;
    }
    if (!(b.p > 0.0 && b.p < 1.0))
      throw ParseError("bernoulli p must lie in (0,1): '" + text + "'");
    return b;
  }
  if (head == "explicit") {
    if (trim(body).empty()) throw ParseError("explicit marginals need a file path: '" + text + "'");
    ExplicitMarginals e{read_marginals(trim(body))};
    if ((e.probabilities.array() < 0.0).any() || (e.probabilities.array() > 1.0).any())
      throw ParseError("explicit marginals must lie in [0,1]: '" + text + "'");
    return e;
  }
  throw ParseError("unknown intervention '" + text + "'");
}

std::string to_string(const InterventionSpec& spec) {
  return std::visit(
      Overloaded{
          [](const AllTreat&) -> std::string { return "all_treat"; },
          [](const AllControl&) -> std::string { return "all_control"; },
          [](const CompleteRandomization&) -> std::string { return "complete_randomization"; },
          [](const RankTopS& r) -> std::string {
            return "rank_top_s:score=" + r.score + ",direction=" + (r.descending ? "desc" : "asc");
          },
          [](const Bernoulli& b) -> std::string {
            std::ostringstream ss;
            ss << std::setprecision(17) << "bernoulli:p=" << b.p;
            return ss.str();
          },
          [](const ExplicitMarginals& e) -> std::string {
            return "explicit[" + std::to_string(e.probabilities.size()) + "]";
          },
      },
      spec);
}

MarginalIntervention marginalize(const InterventionSpec& spec, const Sample& sample,
                                 const ExposureSummary& summary) {
  const auto n = sample.size();
  if (summary.n != n) throw EstimationError("exposure summary does not match sample size");
  MarginalIntervention out;
  std::visit(
      Overloaded{
          [&](const AllTreat&) {
            out.probs_treat = Eigen::VectorXd::Ones(n);
            out.individual_level = true;
          },
          [&](const AllControl&) {
            out.probs_treat = Eigen::VectorXd::Zero(n);
            out.individual_level = true;
          },
          [&](const CompleteRandomization&) {
            out.probs_treat = Eigen::VectorXd::Constant(n, summary.a_bar);
          },
          [&](const RankTopS& r) {
            const auto col = sample.covariate_index(r.score);
            if (col < 0) throw ParseError("rank_top_s score column '" + r.score + "' not in sample");
            const Eigen::VectorXd score = sample.covariates.col(col);
            std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
            std::iota(order.begin(), order.end(), Eigen::Index{0});
            std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
              return r.descending ? score[a] > score[b] : score[a] < score[b];
            });
            out.probs_treat = Eigen::VectorXd::Zero(n);
            for (Eigen::Index k = 0; k < summary.s_n; ++k)
              out.probs_treat[order[static_cast<std::size_t>(k)]] = 1.0;
          },
          [&](const Bernoulli& b) {
            out.probs_treat = Eigen::VectorXd::Constant(n, b.p);
            out.individual_level = true;
          },
          [&](const ExplicitMarginals& e) {
            if (e.probabilities.size() != n)
              throw ParseError("explicit marginals have length " +
                               std::to_string(e.probabilities.size()) + ", sample has n=" +
                               std::to_string(n));
            if ((e.probabilities.array() < 0.0).any() || (e.probabilities.array() > 1.0).any())
              throw ParseError("explicit marginals must lie in [0,1]");
            out.probs_treat = e.probabilities;
            out.individual_level = true;
          },
      },
      spec);
  out.is_ers = check_ers(spec, summary);
  out.is_aers = out.is_ers || check_aers(out, summary);
  return out;
}

bool check_aers(const MarginalIntervention& marginals, const ExposureSummary& summary, double tol) {
  if (marginals.probs_treat.size() == 0) return false;
  return std::abs(marginals.probs_treat.mean() - summary.a_bar) <= tol;
}

bool check_ers(const InterventionSpec& spec, const ExposureSummary& summary) {
  if (std::holds_alternative<CompleteRandomization>(spec) || std::holds_alternative<RankTopS>(spec))
    return true;
  if (const auto* e = std::get_if<ExplicitMarginals>(&spec)) {
    const auto& p = e->probabilities;
    const bool binary = (p.array() == 0.0 || p.array() == 1.0).all();
    return binary && p.size() == summary.n && p.sum() == static_cast<double>(summary.s_n);
  }
  return false;
}

}  // namespace tmlesi
