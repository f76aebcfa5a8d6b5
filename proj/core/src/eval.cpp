#include "featxlate/eval.hpp"

#include <torch/torch.h>

#include <fstream>
#include <iomanip>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <random>

#include "featxlate/data.hpp"
#include "featxlate/encoder.hpp"
#include "featxlate/error.hpp"

namespace featxlate {

namespace fs = std::filesystem;

GaussianMoments moments(const EmbeddingSet& set) {
  const auto n = set.size();
  if (n < 2) {
    throw Error("embedding set '" + set.label + "' needs at least 2 rows for a covariance, has " + std::to_string(n));
  }
  if (!set.rows.allFinite()) throw NumericError("embedding set '" + set.label + "' contains non-finite values");
  GaussianMoments m;
  m.mean = set.rows.colwise().mean().transpose();
  Eigen::MatrixXd centred = set.rows.rowwise() - m.mean.transpose();
  m.cov = (centred.transpose() * centred) / static_cast<double>(n - 1);
  return m;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  if (eig.info() != Eigen::Success) throw NumericError("eigendecomposition failed in matrix square root");
  Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

double frechet_distance(const GaussianMoments& a, const GaussianMoments& b) {
  if (a.mean.size() != b.mean.size()) {
    throw ShapeError("frechet_distance: dimensions differ (" + std::to_string(a.mean.size()) + " vs " +
                     std::to_string(b.mean.size()) + ")");
  }
  const double mean_term = (a.mean - b.mean).squaredNorm();
  Eigen::MatrixXd root_a = psd_sqrt(a.cov);
  if (!root_a.allFinite()) throw NumericError("frechet_distance: non-finite square root of the first covariance");
  Eigen::MatrixXd inner = root_a * b.cov * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericError("frechet_distance: eigendecomposition of the cross term failed");
  const double cross = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double fd = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross;
  if (!std::isfinite(fd)) throw NumericError("frechet_distance: non-finite result in the trace combination");
  // Rounding can leave a tiny negative value for identical distributions.
  return std::max(fd, 0.0);
}

double frechet_distance(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.dim() != b.dim()) throw ShapeError("frechet_distance: embedding dimensions differ");
  return frechet_distance(moments(a), moments(b));
}

EmbeddingSet collect_embeddings(const std::vector<fs::path>& images, const Encoder& encoder, std::string label) {
  EmbeddingSet set;
  set.label = std::move(label);
  set.extractor_tag = encoder.profile().kind == ProfileKind::vgg19 ? "vgg19-fc7" : "toy-head";
  set.rows.resize(static_cast<Eigen::Index>(images.size()), encoder.profile().embedding_dim);
  std::mt19937_64 unused(0);
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto img = augment(load_image(images[i]), AugmentPolicy::eval, unused, encoder.profile().input_side);
    auto e = encoder.extract_embedding(img).to(torch::kFloat64).contiguous();
    set.rows.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::VectorXd>(e.data_ptr<double>(), e.numel()).transpose();
  }
  return set;
}

Eigen::MatrixXd pca_2d(const Eigen::MatrixXd& rows) {
  Eigen::MatrixXd centred = rows.rowwise() - rows.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(rows.cols(), 2);
  const auto k = std::min<Eigen::Index>(2, svd.matrixV().cols());
  basis.leftCols(k) = svd.matrixV().leftCols(k);
  return centred * basis;
}

std::vector<ProjectedPoint> project_2d(const std::vector<EmbeddingSet>& sets, ProjectionMethod method,
                                       const TsneOptions& options) {
  Eigen::Index total = 0, dim = -1;
  for (const auto& s : sets) {
    total += s.size();
    if (s.size() > 0) {
      if (dim >= 0 && dim != s.dim()) throw ShapeError("project_2d: embedding sets have different dimensions");
      dim = s.dim();
    }
  }
  if (total < 3) throw Error("project_2d needs at least 3 points, got " + std::to_string(total));
  Eigen::MatrixXd stacked(total, dim);
  std::vector<std::string> labels;
  Eigen::Index r = 0;
  for (const auto& s : sets) {
    if (s.size() == 0) continue;
    stacked.middleRows(r, s.size()) = s.rows;
    r += s.size();
    labels.insert(labels.end(), static_cast<std::size_t>(s.size()), s.label);
  }
  Eigen::MatrixXd xy = method == ProjectionMethod::pca ? pca_2d(stacked) : tsne_2d(stacked, options);
  std::vector<ProjectedPoint> points;
  for (Eigen::Index i = 0; i < total; ++i) points.push_back({xy(i, 0), xy(i, 1), labels[static_cast<std::size_t>(i)]});
  return points;
}

void write_point_table(const fs::path& path, const std::vector<ProjectedPoint>& points) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write point table " + path.string());
  out << std::setprecision(10) << "x\ty\tlabel\n";
  for (const auto& p : points) out << p.x << '\t' << p.y << '\t' << p.label << '\n';
}

void write_scatter_png(const fs::path& path, const std::vector<ProjectedPoint>& points, int size) {
  cv::Mat canvas(size, size, CV_8UC3, cv::Scalar(255, 255, 255));
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& p : points) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  const double margin = 0.05 * size;
  const double sx = xmax > xmin ? (size - 2 * margin) / (xmax - xmin) : 1.0;
  const double sy = ymax > ymin ? (size - 2 * margin) / (ymax - ymin) : 1.0;
  for (const auto& p : points) {
    cv::Scalar colour(128, 128, 128);  // BGR
    if (p.label == "source") colour = cv::Scalar(255, 0, 0);
    else if (p.label == "target") colour = cv::Scalar(0, 0, 255);
    else if (p.label == "translated") colour = cv::Scalar(255, 255, 0);
    cv::Point c(static_cast<int>(margin + (p.x - xmin) * sx), static_cast<int>(size - margin - (p.y - ymin) * sy));
    cv::circle(canvas, c, 4, colour, cv::FILLED, cv::LINE_AA);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), canvas)) throw IoError("cannot write plot " + path.string());
}

void append_results_ledger(const fs::path& path, const LedgerRow& row) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to results ledger " + path.string());
  if (fresh) out << "dataset\tdirection\tscore\tn_a\tn_b\textractor\tconfig_hash\n";
  out << std::setprecision(10) << row.dataset << '\t' << row.direction << '\t' << row.score << '\t' << row.n_a << '\t'
      << row.n_b << '\t' << row.extractor << '\t' << row.config_hash << '\n';
}

}  // namespace featxlate
