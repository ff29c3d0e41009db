#include "latnas/gaussian_process.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "latnas/errors.hpp"

namespace latnas {

namespace {

double sq_dist(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  return (a - b).squaredNorm();
}

}  // namespace

SurrogateModel fit_surrogate(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                             const GpOptions& options) {
  if (x.size() < 2 || x.size() != y.size()) throw Error("fit_surrogate needs >= 2 paired samples");
  if (options.length_scales.empty()) throw Error("fit_surrogate needs at least one length scale");
  const auto n = static_cast<Eigen::Index>(x.size());
  const auto d = static_cast<Eigen::Index>(x.front().size());

  SurrogateModel best;
  best.x_.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(x[i].size()) != d) throw Error("fit_surrogate: ragged inputs");
    for (Eigen::Index j = 0; j < d; ++j) best.x_(i, j) = x[i][j];
  }
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double scale = var > 0.0 ? std::sqrt(var) : 1.0;
  Eigen::VectorXd ys(n);
  for (Eigen::Index i = 0; i < n; ++i) ys(i) = (y[i] - mean) / scale;

  Eigen::MatrixXd d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d2(i, i) = 0.0;
    for (Eigen::Index j = 0; j < i; ++j) d2(i, j) = d2(j, i) = sq_dist(best.x_.row(i), best.x_.row(j));
  }

  bool fitted = false;
  best.log_ml_ = -std::numeric_limits<double>::infinity();
  for (double ls : options.length_scales) {
    Eigen::MatrixXd k = (-d2 / (2.0 * ls * ls)).array().exp().matrix();
    k.diagonal().array() += options.noise;
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    for (std::size_t attempt = 0; llt.info() != Eigen::Success && attempt < options.jitter.size(); ++attempt) {
      Eigen::MatrixXd kj = k;
      kj.diagonal().array() += options.jitter[attempt];
      llt.compute(kj);
    }
    if (llt.info() != Eigen::Success) continue;
    Eigen::VectorXd alpha = llt.solve(ys);
    Eigen::MatrixXd l = llt.matrixL();
    double log_det = 2.0 * l.diagonal().array().log().sum();
    double lml = -0.5 * ys.dot(alpha) - 0.5 * log_det - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
    if (!fitted || lml > best.log_ml_) {
      fitted = true;
      best.log_ml_ = lml;
      best.length_scale_ = ls;
      best.alpha_ = std::move(alpha);
      best.chol_l_ = std::move(l);
    }
  }
  if (!fitted) throw SingularKernel("kernel matrix is not positive definite at any jitter level");
  best.y_mean_ = mean;
  best.y_scale_ = scale;
  return best;
}

Prediction SurrogateModel::predict(const std::vector<double>& xq) const {
  const auto n = x_.rows();
  Eigen::RowVectorXd q(x_.cols());
  for (Eigen::Index j = 0; j < x_.cols(); ++j) q(j) = xq[static_cast<std::size_t>(j)];
  Eigen::VectorXd kx(n);
  const double inv = 1.0 / (2.0 * length_scale_ * length_scale_);
  for (Eigen::Index i = 0; i < n; ++i) kx(i) = std::exp(-sq_dist(x_.row(i), q) * inv);
  const double mu = kx.dot(alpha_);
  Eigen::VectorXd v = chol_l_.triangularView<Eigen::Lower>().solve(kx);
  const double var = std::max(0.0, 1.0 - v.squaredNorm());
  return {y_mean_ + y_scale_ * mu, y_scale_ * y_scale_ * var};
}

double expected_improvement(double mean, double sd, double best) {
  const double diff = mean - best;
  if (!(sd > 0.0)) return std::max(diff, 0.0);
  const double z = diff / sd;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return std::max(0.0, diff * cdf + sd * pdf);
}

double acquisition_ei(const SurrogateModel& model, const std::vector<double>& x, double best) {
  auto p = model.predict(x);
  return expected_improvement(p.mean, std::sqrt(p.variance), best);
}

}  // namespace latnas
