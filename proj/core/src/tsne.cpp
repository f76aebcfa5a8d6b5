#include <algorithm>
#include <cmath>
#include <random>

#include "featxlate/error.hpp"
#include "featxlate/eval.hpp"

namespace featxlate {

namespace {

// Row-conditional affinities P(j|i) whose entropy matches log(perplexity).
Eigen::MatrixXd conditional_affinities(const Eigen::MatrixXd& sq_dist, double perplexity) {
  const Eigen::Index n = sq_dist.rows();
  const double target = std::log(perplexity);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    Eigen::VectorXd row(n);
    for (int iter = 0; iter < 200; ++iter) {
      double sum = 0.0, weighted = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        row(j) = j == i ? 0.0 : std::exp(-beta * sq_dist(i, j));
        sum += row(j);
        weighted += row(j) * sq_dist(i, j);
      }
      if (sum <= 0.0) sum = 1e-300;
      const double entropy = std::log(sum) + beta * weighted / sum;
      row /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    p.row(i) = row.transpose();
  }
  return p;
}

}  // namespace

Eigen::MatrixXd tsne_2d(const Eigen::MatrixXd& rows, const TsneOptions& options) {
  const Eigen::Index n = rows.rows();
  if (n < 3) throw Error("t-SNE needs at least 3 points");
  // Perplexity must leave room for neighbours.
  const double perplexity = std::min(options.perplexity, std::max(1.0, (static_cast<double>(n) - 1.0) / 3.0));

  Eigen::VectorXd norms = rows.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = (norms.replicate(1, n) + norms.transpose().replicate(n, 1) - 2.0 * rows * rows.transpose())
                           .cwiseMax(0.0);
  Eigen::MatrixXd p = conditional_affinities(d2, perplexity);
  // eval(): the transpose would otherwise read already-overwritten entries.
  p = ((p + p.transpose()) / (2.0 * static_cast<double>(n))).eval();
  p = p.cwiseMax(1e-12);

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1e-4);
  Eigen::MatrixXd y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i, 0) = normal(rng);
    y(i, 1) = normal(rng);
  }
  Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(n, 2);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);

  constexpr int kExaggerationIters = 100;
  constexpr double kExaggeration = 12.0;
  const double learning_rate = options.learning_rate > 0.0
                                   ? options.learning_rate
                                   : std::max(static_cast<double>(n) / kExaggeration / 4.0, 50.0);
  for (int iter = 0; iter < options.iterations; ++iter) {
    const double exaggeration = iter < kExaggerationIters ? kExaggeration : 1.0;
    const double momentum = iter < 250 ? 0.5 : 0.8;
    Eigen::VectorXd yn = y.rowwise().squaredNorm();
    Eigen::MatrixXd num = (1.0 + (yn.replicate(1, n) + yn.transpose().replicate(n, 1) - 2.0 * y * y.transpose()).array())
                              .inverse()
                              .matrix();
    num.diagonal().setZero();
    const double z = num.sum();
    Eigen::MatrixXd q = (num / z).cwiseMax(1e-12);
    Eigen::MatrixXd w = ((exaggeration * p - q).array() * num.array()).matrix();
    Eigen::MatrixXd grad(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      grad.row(i) = 4.0 * (w.row(i) * (y.row(i).replicate(n, 1) - y));
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int k = 0; k < 2; ++k) {
        const bool same_sign = (grad(i, k) > 0) == (velocity(i, k) > 0);
        gains(i, k) = same_sign ? std::max(gains(i, k) * 0.8, 0.01) : gains(i, k) + 0.2;
      }
    }
    velocity = momentum * velocity - learning_rate * gains.cwiseProduct(grad);
    y += velocity;
    const Eigen::RowVector2d centre = y.colwise().mean();
    y.rowwise() -= centre;
  }
  if (!y.allFinite()) throw NumericError("t-SNE diverged");
  return y;
}

}  // namespace featxlate
