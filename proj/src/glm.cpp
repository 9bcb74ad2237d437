#include "tmlesi/glm.hpp"

#include "tmlesi/normal.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <sstream>

namespace tmlesi {

namespace {

constexpr int kMaxIterations = 100;
constexpr double kCoefTolerance = 1e-10;
constexpr double kScoreTolerance = 1e-10;
constexpr double kWeightFloor = 1e-10;
constexpr double kSeparationEta = 30.0;

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

bool is_identifier(const std::string& s) {
  if (s.empty() || std::isdigit(static_cast<unsigned char>(s.front()))) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
  });
}

// log(mu) and log(1 - mu) computed from eta without cancellation.
std::pair<double, double> log_mu_pair(Link link, double eta) {
  if (link == Link::Logit) {
    const double lp = eta >= 0 ? -std::log1p(std::exp(-eta)) : eta - std::log1p(std::exp(eta));
    const double lq = eta >= 0 ? -eta - std::log1p(std::exp(-eta)) : -std::log1p(std::exp(eta));
    return {lp, lq};
  }
  const double lo = std::numeric_limits<double>::min();
  return {std::log(std::max(normal_cdf(eta), lo)), std::log(std::max(normal_cdf(-eta), lo))};
}

double bernoulli_deviance(Link link, const Eigen::VectorXd& y, const Eigen::VectorXd& eta) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const auto [lp, lq] = log_mu_pair(link, eta[i]);
    const double yi = y[i];
    if (yi > 0.0) dev += yi * (std::log(yi) - lp);
    if (yi < 1.0) dev += (1.0 - yi) * (std::log1p(-yi) - lq);
  }
  return 2.0 * dev;
}

// Gradient of the log-likelihood with respect to eta, per row.
Eigen::VectorXd eta_score(Link link, const Eigen::VectorXd& y, const Eigen::VectorXd& eta) {
  Eigen::VectorXd s(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double mu = mean_from_eta(link, eta[i]);
    if (link == Link::Probit) {
      const double var = std::max(normal_cdf(eta[i]) * normal_cdf(-eta[i]), 1e-300);
      s[i] = (y[i] - mu) * normal_pdf(eta[i]) / var;
    } else {
      s[i] = y[i] - mu;
    }
  }
  return s;
}

void require_full_rank(const Eigen::MatrixXd& x, const ModelSpec& spec) {
  if (x.rows() < x.cols())
    throw EstimationError("design for '" + spec.formula() + "' has fewer rows (" +
                          std::to_string(x.rows()) + ") than columns (" +
                          std::to_string(x.cols()) + ")");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() == x.cols()) return;
  std::ostringstream msg;
  msg << "rank-deficient design for '" << spec.formula() << "': collinear columns";
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index k = qr.rank(); k < x.cols(); ++k) {
    const auto col = perm[k];
    msg << ' ' << (static_cast<std::size_t>(col) < spec.terms.size()
                       ? spec.terms[static_cast<std::size_t>(col)].label()
                       : std::to_string(col));
  }
  throw EstimationError(msg.str());
}

Eigen::VectorXd weighted_solve(const Eigen::MatrixXd& x, const Eigen::VectorXd& w,
                               const Eigen::VectorXd& z) {
  const Eigen::VectorXd sw = w.array().sqrt();
  const Eigen::MatrixXd xw = x.array().colwise() * sw.array();
  const Eigen::VectorXd zw = z.cwiseProduct(sw);
  return xw.householderQr().solve(zw);
}

GlmFit fit_bernoulli(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, GlmFit fit) {
  const Link link = fit.spec.link;
  const auto p = x.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(x.rows());
  double dev = bernoulli_deviance(link, y, eta);

  for (int iter = 1; iter <= kMaxIterations; ++iter) {
    Eigen::VectorXd w(y.size()), z(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double mu = mean_from_eta(link, eta[i]);
      if (link == Link::Logit) {
        const double v = std::max(mu * (1.0 - mu), kWeightFloor);
        w[i] = v;
        z[i] = eta[i] + (y[i] - mu) / v;
      } else {
        const double d = std::max(normal_pdf(eta[i]), 1e-300);
        const double var = std::max(normal_cdf(eta[i]) * normal_cdf(-eta[i]), 1e-300);
        w[i] = std::max(d * d / var, kWeightFloor);
        z[i] = eta[i] + (y[i] - mu) / d;
      }
    }
    Eigen::VectorXd proposal = weighted_solve(x, w, z);
    Eigen::VectorXd new_eta = x * proposal;
    double new_dev = bernoulli_deviance(link, y, new_eta);
    for (int half = 0; half < 40 && !(new_dev <= dev * (1.0 + 1e-15) + 1e-300); ++half) {
      proposal = 0.5 * (proposal + beta);
      new_eta = x * proposal;
      new_dev = bernoulli_deviance(link, y, new_eta);
    }
    const double change = (proposal - beta).cwiseAbs().maxCoeff();
    const bool improving = new_dev < dev;
    beta = std::move(proposal);
    eta = std::move(new_eta);
    dev = new_dev;
    fit.iterations = iter;

    if (improving && eta.cwiseAbs().minCoeff() > kSeparationEta)
      throw EstimationError("separation: linear predictor exceeds " +
                            std::to_string(kSeparationEta) + " in magnitude on every row of '" +
                            fit.spec.formula() + "'");
    const double score = (x.transpose() * eta_score(link, y, eta)).cwiseAbs().maxCoeff();
    if (change < kCoefTolerance || score < kScoreTolerance) {
      fit.converged = true;
      break;
    }
  }
  // The score can vanish before |eta| gets large; a binary response fitted
  // perfectly on every row is complete separation all the same.
  const bool binary = ((y.array() == 0.0) || (y.array() == 1.0)).all();
  if (binary) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i)
      worst = std::max(worst, std::abs(y[i] - mean_from_eta(link, eta[i])));
    if (worst < 1e-6)
      throw EstimationError("separation: '" + fit.spec.formula() +
                            "' fits every row perfectly (complete separation)");
  }
  fit.coefficients = std::move(beta);
  fit.deviance = dev;
  return fit;
}

}  // namespace

std::string to_string(Link link) {
  switch (link) {
    case Link::Logit: return "logit";
    case Link::Probit: return "probit";
    case Link::Identity: return "identity";
  }
  return "?";
}

double mean_from_eta(Link link, double eta) {
  switch (link) {
    case Link::Logit: return expit(eta);
    case Link::Probit: return normal_cdf(eta);
    case Link::Identity: return eta;
  }
  return eta;
}

std::string Term::label() const {
  if (variables.empty()) return "(Intercept)";
  std::string out = variables.front();
  for (std::size_t i = 1; i < variables.size(); ++i) out += ":" + variables[i];
  return out;
}

std::string ModelSpec::formula() const {
  std::string rhs;
  bool has_intercept = !terms.empty() && terms.front().is_intercept();
  rhs = has_intercept ? "1" : "0";
  for (const auto& t : terms)
    if (!t.is_intercept()) rhs += " + " + t.label();
  return response + " ~ " + rhs + " [" + to_string(link) + "]";
}

ModelSpec parse_formula(const std::string& text, ModelRole role) {
  ModelSpec spec;
  spec.role = role;
  std::string body = text;

  const auto open = body.find('[');
  if (open != std::string::npos) {
    const auto close = body.find(']', open);
    if (close == std::string::npos || !trim(body.substr(close + 1)).empty())
      throw ParseError("malformed link bracket in formula '" + text + "'");
    const auto name = trim(body.substr(open + 1, close - open - 1));
    if (name == "logit") spec.link = Link::Logit;
    else if (name == "probit") spec.link = Link::Probit;
    else if (name == "identity") spec.link = Link::Identity;
    else throw ParseError("unknown link '" + name + "' in formula '" + text + "'");
    body = body.substr(0, open);
  }

  const auto tilde = body.find('~');
  if (tilde == std::string::npos || body.find('~', tilde + 1) != std::string::npos)
    throw ParseError("formula '" + text + "' must have exactly one '~'");
  spec.response = trim(body.substr(0, tilde));
  if (!is_identifier(spec.response))
    throw ParseError("bad response '" + spec.response + "' in formula '" + text + "'");

  std::string rhs = body.substr(tilde + 1);
  // "-1" is the only subtraction accepted; normalize it to a "0" token.
  for (auto pos = rhs.find("- 1"); pos != std::string::npos; pos = rhs.find("- 1")) rhs.replace(pos, 3, "+0");
  for (auto pos = rhs.find("-1"); pos != std::string::npos; pos = rhs.find("-1")) rhs.replace(pos, 2, "+0");

  bool intercept = true;
  std::vector<Term> terms;
  rhs = trim(rhs);
  if (!rhs.empty() && rhs.front() == '+') rhs.erase(0, 1);
  // getline drops a trailing empty field, so catch "w +" here
  if (!rhs.empty() && rhs.back() == '+') throw ParseError("empty term in formula '" + text + "'");
  std::istringstream ss(rhs);
  std::string token;
  bool any = false;
  while (std::getline(ss, token, '+')) {
    token = trim(token);
    if (token.empty()) throw ParseError("empty term in formula '" + text + "'");
    any = true;
    if (token == "1") continue;
    if (token == "0") {
      intercept = false;
      continue;
    }
    if (token.back() == ':') throw ParseError("bad term '" + token + "' in formula '" + text + "'");
    Term term;
    std::istringstream ts(token);
    std::string var;
    while (std::getline(ts, var, ':')) {
      var = trim(var);
      if (!is_identifier(var))
        throw ParseError("bad term '" + token + "' in formula '" + text + "'");
      term.variables.push_back(var);
    }
    if (term.variables.size() > 2)
      throw ParseError("only pairwise interactions are supported: '" + token + "' in '" + text + "'");
    if (std::find(terms.begin(), terms.end(), term) != terms.end())
      throw ParseError("duplicate term '" + token + "' in formula '" + text + "'");
    terms.push_back(std::move(term));
  }
  if (!any) throw ParseError("formula '" + text + "' has no right-hand side");
  if (intercept) spec.terms.push_back(Term{});
  for (auto& t : terms) spec.terms.push_back(std::move(t));
  if (spec.terms.empty()) throw ParseError("formula '" + text + "' has no terms");
  return spec;
}

void check_spec(const ModelSpec& spec, const Sample& sample) {
  if (spec.role == ModelRole::Propensity) {
    if (spec.response != sample.exposure_name)
      throw ParseError("propensity formula '" + spec.formula() + "' must have response '" +
                       sample.exposure_name + "'");
    if (spec.link == Link::Identity)
      throw ParseError("propensity formula '" + spec.formula() + "' needs a logit or probit link");
  } else if (spec.response != sample.outcome_name) {
    throw ParseError("outcome formula '" + spec.formula() + "' must have response '" +
                     sample.outcome_name + "'");
  }
  for (const auto& t : spec.terms) {
    for (const auto& v : t.variables) {
      if (v == sample.exposure_name) {
        if (spec.role == ModelRole::Propensity)
          throw ParseError("propensity formula '" + spec.formula() +
                           "' may not reference the exposure");
        continue;
      }
      if (sample.covariate_index(v) < 0)
        throw ParseError("formula '" + spec.formula() + "' references unknown variable '" + v + "'");
    }
  }
}

Eigen::MatrixXd design_matrix(const ModelSpec& spec, const std::vector<std::string>& names,
                              const Eigen::MatrixXd& covariates, const Eigen::VectorXd* exposure,
                              const std::string& exposure_name) {
  const auto n = covariates.rows();
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(spec.terms.size()));
  auto column = [&](const std::string& v) -> Eigen::VectorXd {
    if (v == exposure_name) {
      if (exposure == nullptr)
        throw ParseError("formula '" + spec.formula() + "' needs exposure values");
      return *exposure;
    }
    const auto it = std::find(names.begin(), names.end(), v);
    if (it == names.end())
      throw ParseError("covariate '" + v + "' of formula '" + spec.formula() + "' not supplied");
    return covariates.col(it - names.begin());
  };
  for (std::size_t j = 0; j < spec.terms.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    const auto& vars = spec.terms[j].variables;
    if (vars.empty()) {
      x.col(col).setOnes();
    } else if (vars.size() == 1) {
      x.col(col) = column(vars[0]);
    } else {
      x.col(col) = column(vars[0]).cwiseProduct(column(vars[1]));
    }
  }
  return x;
}

GlmFit fit_glm(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const ModelSpec& spec) {
  if (x.rows() != y.size()) throw EstimationError("design and response lengths differ");
  require_full_rank(x, spec);
  GlmFit fit;
  fit.spec = spec;
  if (spec.link == Link::Identity) {
    fit.coefficients = x.householderQr().solve(y);
    fit.deviance = (y - x * fit.coefficients).squaredNorm();
    fit.converged = true;
    fit.iterations = 1;
    return fit;
  }
  if ((y.array() < 0.0).any() || (y.array() > 1.0).any())
    throw EstimationError("response for '" + spec.formula() + "' must lie in [0,1]");
  return fit_bernoulli(x, y, std::move(fit));
}

GlmFit fit_glm(const Sample& sample, const ModelSpec& spec) {
  check_spec(spec, sample);
  const Eigen::VectorXd& y = spec.role == ModelRole::Propensity ? sample.exposure : sample.outcome;
  const auto x = design_matrix(spec, sample.covariate_names, sample.covariates, &sample.exposure,
                               sample.exposure_name);
  GlmFit fit = fit_glm(x, y, spec);
  fit.covariate_names = sample.covariate_names;
  fit.exposure_name = sample.exposure_name;
  return fit;
}

Eigen::VectorXd predict(const GlmFit& fit, const Eigen::MatrixXd& covariates,
                        const std::vector<std::string>& names, const Eigen::VectorXd* exposure) {
  if (names != fit.covariate_names)
    throw ParseError("covariate name mismatch with model '" + fit.spec.formula() + "'");
  if (fit.spec.role == ModelRole::Outcome && exposure == nullptr) {
    for (const auto& t : fit.spec.terms)
      for (const auto& v : t.variables)
        if (v == fit.exposure_name)
          throw ParseError("outcome predictions for '" + fit.spec.formula() + "' need an exposure");
  }
  const auto x = design_matrix(fit.spec, names, covariates, exposure, fit.exposure_name);
  Eigen::VectorXd eta = x * fit.coefficients;
  for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = mean_from_eta(fit.spec.link, eta[i]);
  return eta;
}

Eigen::VectorXd predict_at(const GlmFit& fit, const Sample& sample, double a) {
  const Eigen::VectorXd exposure = Eigen::VectorXd::Constant(sample.size(), a);
  return predict(fit, sample.covariates, sample.covariate_names, &exposure);
}

Eigen::VectorXd predict_observed(const GlmFit& fit, const Sample& sample) {
  return predict(fit, sample.covariates, sample.covariate_names, &sample.exposure);
}

}  // namespace tmlesi
