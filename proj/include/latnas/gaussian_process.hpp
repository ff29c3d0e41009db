#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace latnas {

struct GpOptions {
  /// Candidate length scales; the one with the highest log marginal likelihood wins.
  std::vector<double> length_scales{0.1, 0.2, 0.5, 1.0};
  /// Observation noise variance in standardized-target units.
  double noise = 1e-6;
  /// Diagonal jitter added on a failed Cholesky, tried in order.
  std::vector<double> jitter{1e-8, 1e-6, 1e-4};
};

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// Zero-mean GP with a squared-exponential kernel of unit signal variance
/// over standardized targets.
class SurrogateModel {
 public:
  double length_scale() const noexcept { return length_scale_; }
  double log_marginal_likelihood() const noexcept { return log_ml_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(x_.rows()); }

  /// Mean and variance in the original target units.
  Prediction predict(const std::vector<double>& x) const;

  friend SurrogateModel fit_surrogate(const std::vector<std::vector<double>>& x,
                                      const std::vector<double>& y, const GpOptions& options);

 private:
  Eigen::MatrixXd x_;
  Eigen::VectorXd alpha_;
  Eigen::MatrixXd chol_l_;
  double length_scale_ = 1.0;
  double log_ml_ = 0.0;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
};

/// Requires at least 2 samples. Throws SingularKernel when every jitter level fails.
SurrogateModel fit_surrogate(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                             const GpOptions& options = {});

/// Closed-form EI for maximization: (mu - best) Phi(z) + sd phi(z).
double expected_improvement(double mean, double sd, double best);
double acquisition_ei(const SurrogateModel& model, const std::vector<double>& x, double best);

}  // namespace latnas
