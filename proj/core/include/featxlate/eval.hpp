#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace featxlate {

class Encoder;

// n x d matrix of embedding rows with a provenance label.
struct EmbeddingSet {
  std::string label;          // "source" | "target" | "translated"
  Eigen::MatrixXd rows;
  std::string extractor_tag;  // e.g. "vgg19-fc7", "toy-head", "inception"

  Eigen::Index size() const { return rows.rows(); }
  Eigen::Index dim() const { return rows.cols(); }
};

struct GaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // 1/(n-1) normalisation
};

GaussianMoments moments(const EmbeddingSet& set);

// Square root of a symmetric PSD matrix via eigendecomposition; negative
// eigenvalues are clipped to zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m);

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}). The cross term is
// evaluated as Tr((S_a^{1/2} S_b S_a^{1/2})^{1/2}).
double frechet_distance(const GaussianMoments& a, const GaussianMoments& b);
double frechet_distance(const EmbeddingSet& a, const EmbeddingSet& b);

// One row per image; images are (3, S, S) float [0,1] files loaded and
// center-cropped to the encoder side.
EmbeddingSet collect_embeddings(const std::vector<std::filesystem::path>& images, const Encoder& encoder,
                                std::string label);

enum class ProjectionMethod { pca, tsne };

struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 1000;
  // <= 0: max(n / early_exaggeration / 4, 50), stable for small point counts.
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
};

struct ProjectedPoint {
  double x = 0, y = 0;
  std::string label;
};

// First two principal components of the centred rows.
Eigen::MatrixXd pca_2d(const Eigen::MatrixXd& rows);
// Exact t-SNE (Gaussian input affinities with per-point perplexity search,
// Student-t output kernel, early exaggeration, momentum gradient descent).
Eigen::MatrixXd tsne_2d(const Eigen::MatrixXd& rows, const TsneOptions& options);

// Stacks every set, projects, and labels each point with its set's label.
// Throws when fewer than 3 points are given.
std::vector<ProjectedPoint> project_2d(const std::vector<EmbeddingSet>& sets, ProjectionMethod method,
                                       const TsneOptions& options = {});

// "x\ty\tlabel" with a header line.
void write_point_table(const std::filesystem::path& path, const std::vector<ProjectedPoint>& points);
// Scatter plot; source = blue, target = red, translated = cyan, others grey.
void write_scatter_png(const std::filesystem::path& path, const std::vector<ProjectedPoint>& points, int size = 600);

struct LedgerRow {
  std::string dataset;
  std::string direction;
  double score = 0;
  std::int64_t n_a = 0;
  std::int64_t n_b = 0;
  std::string extractor;
  std::string config_hash;
};

// Appends one tab-separated row (header written when the file is new).
void append_results_ledger(const std::filesystem::path& path, const LedgerRow& row);

}  // namespace featxlate
