#pragma once

#include <cmath>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "sae/errors.hpp"
#include "sae/linking.hpp"
#include "sae/random.hpp"

namespace sae {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// The known, fixed part of an area-level model: the m x p design matrix X
/// and the sampling variances D. Construction checks m > p >= 1, full column
/// rank, and D_i > 0 finite, then caches the OLS quantities that every refit
/// needs (thin Q of X, leverages, and the Prasad-Rao trace constant).
class Design {
 public:
  Design(Matrix x, Vector d) : x_(std::move(x)), d_(std::move(d)) {
    const Eigen::Index m = x_.rows();
    const Eigen::Index p = x_.cols();
    if (p < 1) throw ConfigError("design needs at least one column");
    if (d_.size() != m) {
      throw ConfigError("D has " + std::to_string(d_.size()) + " entries but X has " +
                        std::to_string(m) + " rows");
    }
    if (m <= p) {
      throw ConfigError("need more areas than covariates (m=" + std::to_string(m) +
                        ", p=" + std::to_string(p) + ")");
    }
    if (!x_.allFinite()) throw ConfigError("design matrix has non-finite entries");
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!(d_[i] > 0.0) || !std::isfinite(d_[i])) {
        throw ConfigError("sampling variance D_" + std::to_string(i + 1) +
                          " must be positive and finite");
      }
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(x_);
    if (qr.rank() < p) {
      throw SingularDesignError("design matrix has rank " + std::to_string(qr.rank()) +
                                " < p=" + std::to_string(p));
    }
    // Thin Q spans col(X); column pivoting does not change the span.
    q_ = qr.householderQ() * Matrix::Identity(m, p);
    leverage_ = q_.rowwise().squaredNorm();
    pr_trace_ = (d_.array() * (1.0 - leverage_.array())).sum();
  }

  Eigen::Index m() const noexcept { return x_.rows(); }
  Eigen::Index p() const noexcept { return x_.cols(); }
  const Matrix& x() const noexcept { return x_; }
  const Vector& d() const noexcept { return d_; }

  /// Orthonormal basis of col(X), m x p.
  const Matrix& q() const noexcept { return q_; }
  /// OLS leverages h_ii = x_i'(X'X)^{-1}x_i.
  const Vector& leverage() const noexcept { return leverage_; }
  /// tr((I - P_X) diag(D)).
  double pr_trace() const noexcept { return pr_trace_; }

 private:
  Matrix x_;
  Vector d_;
  Matrix q_;
  Vector leverage_;
  double pr_trace_ = 0.0;
};

/// Intercept-only design with the given sampling variances.
inline Design intercept_design(Vector d) {
  Matrix x = Matrix::Ones(d.size(), 1);
  return Design(std::move(x), std::move(d));
}

/// Two-level model y_i = x_i'beta + u_i + e_i with u_i ~ G(0, A) and
/// e_i ~ N(0, D_i).
struct AreaLevelModel {
  Design design;
  Vector beta;
  double A = 1.0;
  LinkingDistribution linking = LinkingDistribution::normal();

  AreaLevelModel(Design design_, Vector beta_, double a, LinkingDistribution g)
      : design(std::move(design_)), beta(std::move(beta_)), A(a), linking(g) {
    if (beta.size() != design.p()) {
      throw ConfigError("beta has " + std::to_string(beta.size()) + " entries, design has p=" +
                        std::to_string(design.p()));
    }
    if (!(A >= 0.0) || !std::isfinite(A)) throw ConfigError("A must be finite and >= 0");
    if (!beta.allFinite()) throw ConfigError("beta has non-finite entries");
  }

  Vector mean() const { return design.x() * beta; }
};

struct PopulationDraw {
  Vector theta;
  Vector y;
};

/// Fills theta = mean + sqrt(A) u and y = theta + sqrt(D) z, area by area.
/// Shared by population sampling and both bootstrap stages.
template <class URBG>
void draw_two_level(const Eigen::Ref<const Vector>& mean, double a, const Vector& d,
                    StandardizedSampler& linking, std::normal_distribution<double>& noise,
                    URBG& rng, Eigen::Ref<Vector> theta, Eigen::Ref<Vector> y) {
  const double sa = std::sqrt(a);
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    theta[i] = mean[i] + sa * linking(rng);
    y[i] = theta[i] + std::sqrt(d[i]) * noise(rng);
  }
}

template <class URBG>
PopulationDraw sample_population(const AreaLevelModel& model, URBG& rng) {
  const Eigen::Index m = model.design.m();
  PopulationDraw out{Vector(m), Vector(m)};
  StandardizedSampler linking(model.linking);
  std::normal_distribution<double> noise;
  draw_two_level(model.mean(), model.A, model.design.d(), linking, noise, rng, out.theta, out.y);
  return out;
}

}  // namespace sae
