#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "sae/errors.hpp"
#include "sae/model.hpp"

namespace sae {

enum class Estimator { FH, PR };

inline std::string_view to_string(Estimator e) { return e == Estimator::FH ? "FH" : "PR"; }

struct EstimatorOptions {
  /// Value substituted for non-positive (or sub-floor) variance estimates.
  /// Scale dependent: 0.01 matches unit-scale D_i.
  double floor = 0.01;
  /// Convergence tolerance on |f(A)| for the Fay-Herriot equation.
  double tol = 1e-8;
  int max_iter = 100;
};

/// Output of a variance-component estimator, before EBLUP plug-in.
struct VarianceFit {
  Estimator method = Estimator::FH;
  Vector beta_hat;
  double A_hat = 0.0;
  /// Untruncated value: the FH root (0 when f(0) <= 0) or the raw PR moment.
  double A_raw = 0.0;
  bool was_truncated = false;
  int iterations = 0;
  bool converged = true;
};

/// Weighted least squares for beta with weights 1/(A + D_i), solved by
/// column-pivoting QR of the row-scaled design.
inline Vector wls_beta(const Matrix& x, const Vector& y, double a, const Vector& d) {
  if (x.rows() != y.size() || x.rows() != d.size()) throw ConfigError("wls_beta: size mismatch");
  const Vector sw = (a + d.array()).rsqrt().matrix();
  const Matrix xw = x.array().colwise() * sw.array();
  Eigen::ColPivHouseholderQR<Matrix> qr(xw);
  if (qr.rank() < x.cols()) throw SingularDesignError("wls_beta: design is rank deficient");
  return qr.solve(y.cwiseProduct(sw));
}

/// f(A) = sum (y_i - x_i' beta~(A))^2 / (A + D_i) - (m - p).
inline double fh_objective(double a, const Matrix& x, const Vector& y, const Vector& d) {
  const Vector r = y - x * wls_beta(x, y, a, d);
  return (r.array().square() / (a + d.array())).sum() - static_cast<double>(x.rows() - x.cols());
}

/// Preallocated workspace for repeated fits on one Design. All per-fit
/// arithmetic runs on member buffers, so the bootstrap loops never touch the
/// heap. Not thread-safe; give each worker its own Fitter.
class Fitter {
 public:
  explicit Fitter(const Design& design)
      : design_(&design),
        w_(design.m()),
        r_(design.m()),
        v_(design.p(), design.m()),
        gram_(design.p(), design.p()),
        rhs_(design.p()),
        beta_(design.p()),
        llt_(design.p()) {}

  const Design& design() const noexcept { return *design_; }

  struct Evaluation {
    double f;        ///< FH objective at A
    double trace_p;  ///< tr(P(A)); NaN unless requested
  };

  /// Computes beta~(A) into beta() and the FH objective at A.
  Evaluation evaluate(double a, const Eigen::Ref<const Vector>& y, bool want_trace) {
    const Matrix& x = design_->x();
    const Vector& d = design_->d();
    const Eigen::Index m = x.rows();
    const Eigen::Index p = x.cols();
    for (Eigen::Index i = 0; i < m; ++i) w_[i] = 1.0 / (a + d[i]);
    gram_.setZero();
    rhs_.setZero();
    for (Eigen::Index k = 0; k < p; ++k) {
      for (Eigen::Index i = 0; i < m; ++i) {
        const double wx = w_[i] * x(i, k);
        rhs_[k] += wx * y[i];
        for (Eigen::Index l = 0; l <= k; ++l) gram_(k, l) += wx * x(i, l);
      }
    }
    for (Eigen::Index k = 0; k < p; ++k) {
      for (Eigen::Index l = k + 1; l < p; ++l) gram_(k, l) = gram_(l, k);
    }
    llt_.compute(gram_);
    if (llt_.info() != Eigen::Success) {
      throw SingularDesignError("weighted Gram matrix is not positive definite");
    }
    beta_ = rhs_;
    llt_.solveInPlace(beta_);

    double q = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      double fitted = 0.0;
      for (Eigen::Index k = 0; k < p; ++k) fitted += x(i, k) * beta_[k];
      r_[i] = y[i] - fitted;
      q += w_[i] * r_[i] * r_[i];
    }
    Evaluation e{q - static_cast<double>(m - p), std::numeric_limits<double>::quiet_NaN()};
    if (want_trace) {
      // tr(P) = sum w_i - ||L^{-1} X'W||_F^2 with X'WX = LL'.
      double sw = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        sw += w_[i];
        for (Eigen::Index k = 0; k < p; ++k) v_(k, i) = w_[i] * x(i, k);
      }
      llt_.matrixL().solveInPlace(v_);
      e.trace_p = sw - v_.squaredNorm();
    }
    return e;
  }

  const Vector& beta() const noexcept { return beta_; }

  /// Fay-Herriot moment estimator solved by scoring from A0 = 0,
  /// A_{k+1} = A_k + f(A_k) / tr(P(A_k)), kept inside a sign-change bracket.
  VarianceFit fh(const Eigen::Ref<const Vector>& y, const EstimatorOptions& opt) {
    VarianceFit out;
    out.method = Estimator::FH;
    Evaluation e = evaluate(0.0, y, true);
    if (!std::isfinite(e.f)) throw NumericError("FH objective is not finite at A = 0");
    double a = 0.0;
    if (e.f > 0.0) {
      double lo = 0.0;
      double hi = std::numeric_limits<double>::infinity();
      out.converged = false;
      for (int it = 1; it <= opt.max_iter; ++it) {
        if (!(e.trace_p > 0.0)) throw NumericError("tr(P) is not positive during FH scoring");
        double next = a + e.f / e.trace_p;
        if (!(next > lo) || !(next < hi)) next = 0.5 * (lo + hi);
        a = next;
        e = evaluate(a, y, true);
        out.iterations = it;
        if (!std::isfinite(e.f)) throw NumericError("FH objective is not finite during scoring");
        if (std::abs(e.f) <= opt.tol) {
          out.converged = true;
          break;
        }
        (e.f > 0.0 ? lo : hi) = a;
        if (std::isfinite(hi) && hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) break;
      }
    }
    out.A_raw = a;
    if (a < opt.floor) {
      out.A_hat = opt.floor;
      out.was_truncated = true;
      evaluate(opt.floor, y, false);
    } else {
      out.A_hat = a;
    }
    out.beta_hat = beta_;
    return out;
  }

  /// Prasad-Rao moment estimator
  /// [Y'(I - P_X)Y - tr((I - P_X)D)] / (m - p), floored.
  VarianceFit pr(const Eigen::Ref<const Vector>& y, const EstimatorOptions& opt) {
    const Matrix& q = design_->q();
    const Eigen::Index m = q.rows();
    const Eigen::Index p = q.cols();
    double ss = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) ss += y[i] * y[i];
    for (Eigen::Index k = 0; k < p; ++k) {
      double c = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) c += q(i, k) * y[i];
      ss -= c * c;
    }
    VarianceFit out;
    out.method = Estimator::PR;
    out.A_raw = (ss - design_->pr_trace()) / static_cast<double>(m - p);
    if (!std::isfinite(out.A_raw)) throw NumericError("PR estimate is not finite");
    out.was_truncated = out.A_raw < opt.floor;
    out.A_hat = out.was_truncated ? opt.floor : out.A_raw;
    evaluate(out.A_hat, y, false);
    out.beta_hat = beta_;
    return out;
  }

  VarianceFit estimate(Estimator e, const Eigen::Ref<const Vector>& y,
                       const EstimatorOptions& opt) {
    return e == Estimator::FH ? fh(y, opt) : pr(y, opt);
  }

 private:
  const Design* design_;
  Vector w_;
  Vector r_;
  Matrix v_;
  Matrix gram_;
  Vector rhs_;
  Vector beta_;
  Eigen::LLT<Matrix> llt_;
};

inline VarianceFit fh_estimate(const Design& design, const Vector& y,
                               const EstimatorOptions& opt = {}) {
  Fitter f(design);
  return f.fh(y, opt);
}

inline VarianceFit pr_estimate(const Design& design, const Vector& y,
                               const EstimatorOptions& opt = {}) {
  Fitter f(design);
  return f.pr(y, opt);
}

/// Estimated model plus plug-in EBLUP quantities for every area.
struct FitResult {
  Estimator method = Estimator::FH;
  Vector beta_hat;
  double A_hat = 0.0;
  double A_raw = 0.0;
  bool was_truncated = false;
  Vector synthetic;  ///< x_i' beta_hat
  Vector eblup;      ///< (1 - B_i) y_i + B_i x_i' beta_hat
  Vector B_hat;      ///< D_i / (A_hat + D_i)
  Vector g1_hat;     ///< A_hat D_i / (A_hat + D_i)
};

inline FitResult eblup(const Design& design, const Vector& y, const VarianceFit& vf) {
  if (!(vf.A_hat > 0.0)) throw ConfigError("eblup requires A_hat > 0");
  if (y.size() != design.m()) throw ConfigError("eblup: y has wrong length");
  FitResult out;
  out.method = vf.method;
  out.beta_hat = vf.beta_hat;
  out.A_hat = vf.A_hat;
  out.A_raw = vf.A_raw;
  out.was_truncated = vf.was_truncated;
  const Vector& d = design.d();
  out.synthetic = design.x() * vf.beta_hat;
  out.B_hat = (d.array() / (vf.A_hat + d.array())).matrix();
  out.g1_hat = (vf.A_hat * out.B_hat.array()).matrix();
  out.eblup =
      ((1.0 - out.B_hat.array()) * y.array() + out.B_hat.array() * out.synthetic.array()).matrix();
  return out;
}

inline FitResult fit(const Design& design, const Vector& y, Estimator e,
                     const EstimatorOptions& opt = {}) {
  Fitter f(design);
  return eblup(design, y, f.estimate(e, y, opt));
}

enum class MspeFlavor { PrasadRao, DattaRaoSmith };

struct MspeEstimate {
  Vector values;
  MspeFlavor flavor = MspeFlavor::PrasadRao;
};

/// Second-order MSPE g1 + g2 + 2 g3 at the plug-in A_hat. The flavor follows
/// the variance estimator: PR uses Var(A) = 2 sum (A + D_i)^2 / m^2, FH uses
/// the scoring information 2 / sum (A + D_i)^{-2}.
inline MspeEstimate mspe(const FitResult& fit, const Design& design) {
  const Matrix& x = design.x();
  const Vector& d = design.d();
  const double a = fit.A_hat;
  const Eigen::Index m = design.m();
  const Eigen::ArrayXd s = a + d.array();
  const Eigen::ArrayXd w = s.inverse();
  const Matrix gram = x.transpose() * (x.array().colwise() * w).matrix();
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) throw SingularDesignError("mspe: X'V^{-1}X is singular");
  const Matrix l_inv_xt = llt.matrixL().solve(x.transpose());
  const Eigen::ArrayXd quad = l_inv_xt.colwise().squaredNorm().transpose().array();

  double var_a = 0.0;
  MspeEstimate out;
  if (fit.method == Estimator::PR) {
    out.flavor = MspeFlavor::PrasadRao;
    var_a = 2.0 * s.square().sum() / static_cast<double>(m * m);
  } else {
    out.flavor = MspeFlavor::DattaRaoSmith;
    var_a = 2.0 / w.square().sum();
  }
  const Eigen::ArrayXd b = d.array() * w;
  const Eigen::ArrayXd g1 = a * b;
  const Eigen::ArrayXd g2 = b.square() * quad;
  const Eigen::ArrayXd g3 = d.array().square() * w.cube() * var_a;
  out.values = (g1 + g2 + 2.0 * g3).matrix();
  return out;
}

/// OLS leverages x_i'(X'X)^{-1}x_i.
inline Vector leverage(const Matrix& x) {
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  if (qr.rank() < x.cols()) throw SingularDesignError("leverage: design is rank deficient");
  const Matrix q = qr.householderQ() * Matrix::Identity(x.rows(), x.cols());
  return q.rowwise().squaredNorm();
}

/// True when max h_ii exceeds 5p/m, i.e. some area dominates the regression fit.
inline bool high_leverage(const Vector& h, Eigen::Index p) {
  return h.maxCoeff() > 5.0 * static_cast<double>(p) / static_cast<double>(h.size());
}

}  // namespace sae
