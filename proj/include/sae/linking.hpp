#pragma once

#include <cctype>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <string_view>

#include "sae/errors.hpp"

namespace sae {

enum class Family { Normal, StudentT, ShiftedExponential, Logistic };

/// Parametric family of the random effects, standardized to mean 0 and
/// variance 1. Scaling by sqrt(A) gives the linking distribution with
/// variance A. StudentT carries its degrees of freedom (must exceed 4 so that
/// the fourth moment exists); the other families have no extra parameter.
class LinkingDistribution {
 public:
  static LinkingDistribution normal() { return LinkingDistribution(Family::Normal, 0.0); }
  static LinkingDistribution student_t(double dof) {
    if (!(dof > 4.0) || !std::isfinite(dof)) {
      throw ConfigError("student t linking requires finite degrees of freedom > 4, got " +
                        std::to_string(dof));
    }
    return LinkingDistribution(Family::StudentT, dof);
  }
  static LinkingDistribution shifted_exponential() {
    return LinkingDistribution(Family::ShiftedExponential, 0.0);
  }
  static LinkingDistribution logistic() { return LinkingDistribution(Family::Logistic, 0.0); }

  /// Accepts "normal", "t:<dof>", "t<dof>", "se", "shifted_exponential", "logistic".
  static LinkingDistribution parse(std::string_view text);

  Family family() const noexcept { return family_; }
  double dof() const noexcept { return dof_; }

  /// Canonical spelling accepted by parse().
  std::string name() const;

  friend bool operator==(const LinkingDistribution&, const LinkingDistribution&) = default;

 private:
  LinkingDistribution(Family f, double dof) : family_(f), dof_(dof) {}

  Family family_;
  double dof_;
};

/// Stateful sampler of standardized draws. Holding the std:: distribution
/// objects across calls keeps the normal generator's cached pair in use.
class StandardizedSampler {
 public:
  explicit StandardizedSampler(const LinkingDistribution& g)
      : family_(g.family()),
        t_(g.family() == Family::StudentT ? g.dof() : 5.0),
        t_scale_(g.family() == Family::StudentT ? std::sqrt((g.dof() - 2.0) / g.dof()) : 1.0) {}

  template <class URBG>
  double operator()(URBG& rng) {
    switch (family_) {
      case Family::Normal:
        return normal_(rng);
      case Family::StudentT:
        return t_(rng) * t_scale_;
      case Family::ShiftedExponential:
        return exponential_(rng) - 1.0;
      case Family::Logistic: {
        // Inverse-cdf on (0,1); generate_canonical can return 0.
        double u;
        do {
          u = std::generate_canonical<double, 64>(rng);
        } while (u <= 0.0 || u >= 1.0);
        return std::log(u / (1.0 - u)) * std::numbers::sqrt3 / std::numbers::pi;
      }
    }
    return 0.0;
  }

 private:
  Family family_;
  std::normal_distribution<double> normal_{};
  std::student_t_distribution<double> t_;
  std::exponential_distribution<double> exponential_{1.0};
  double t_scale_;
};

/// One draw with mean 0 and variance 1 from the standardized family.
template <class URBG>
double standardized_draw(const LinkingDistribution& g, URBG& rng) {
  StandardizedSampler s(g);
  return s(rng);
}

/// Excess kurtosis E(u^4)/A^2 - 3 of the linking family.
inline double excess_kurtosis(const LinkingDistribution& g) {
  switch (g.family()) {
    case Family::Normal:
      return 0.0;
    case Family::StudentT:
      if (!(g.dof() > 4.0)) throw DomainError("t fourth moment requires dof > 4");
      return 6.0 / (g.dof() - 4.0);
    case Family::ShiftedExponential:
      return 6.0;
    case Family::Logistic:
      return 1.2;
  }
  return 0.0;
}

/// Standardized third moment E(u^3)/A^{3/2}.
inline double skewness(const LinkingDistribution& g) {
  return g.family() == Family::ShiftedExponential ? 2.0 : 0.0;
}

inline std::string LinkingDistribution::name() const {
  switch (family_) {
    case Family::Normal:
      return "normal";
    case Family::StudentT: {
      std::string s = std::to_string(dof_);
      s.erase(s.find_last_not_of('0') + 1);
      if (!s.empty() && s.back() == '.') s.pop_back();
      return "t:" + s;
    }
    case Family::ShiftedExponential:
      return "se";
    case Family::Logistic:
      return "logistic";
  }
  return "?";
}

inline LinkingDistribution LinkingDistribution::parse(std::string_view text) {
  std::string s(text);
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "normal" || s == "gaussian") return normal();
  if (s == "se" || s == "shifted_exponential" || s == "shifted-exponential") {
    return shifted_exponential();
  }
  if (s == "logistic") return logistic();
  if (!s.empty() && s[0] == 't') {
    std::string rest = s.substr(1);
    if (!rest.empty() && rest[0] == ':') rest.erase(0, 1);
    if (rest.empty()) throw ConfigError("t linking needs degrees of freedom, e.g. t:9");
    std::size_t used = 0;
    double dof = 0.0;
    try {
      dof = std::stod(rest, &used);
    } catch (const std::exception&) {
      throw ConfigError("cannot parse degrees of freedom in '" + std::string(text) + "'");
    }
    if (used != rest.size()) {
      throw ConfigError("cannot parse degrees of freedom in '" + std::string(text) + "'");
    }
    return student_t(dof);
  }
  throw ConfigError("unknown linking family '" + std::string(text) + "'");
}

}  // namespace sae
