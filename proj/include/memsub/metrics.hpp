#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <unsupported/Eigen/FFT>

#include "memsub/attack.hpp"
#include "memsub/dataset.hpp"

namespace memsub {

// ---------------------------------------------------------------------------
// Similarity to training data

/// 1 − tile_distance / (255·tile), images given as [-1,1] rows.
inline double similarity_proxy(std::span<const float> a, std::span<const float> b, std::size_t side,
                               std::size_t tile) {
  if (a.size() != b.size()) throw ShapeError("similarity_proxy: image sizes differ");
  std::vector<float> pa(a.size()), pb(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[i] = (std::clamp(a[i], -1.0f, 1.0f) + 1.0f) * 127.5f;
    pb[i] = (std::clamp(b[i], -1.0f, 1.0f) + 1.0f) * 127.5f;
  }
  const double worst = 255.0 * double(std::min(tile, side));
  return 1.0 - tile_distance(pa, pb, side, tile) / worst;
}

// ---------------------------------------------------------------------------
// Alignment: a frozen classifier's confidence in the intended label

struct Classifier {
  std::vector<int> labels;  ///< output index → prompt label
  std::function<std::vector<double>(std::span<const float>)> probabilities;

  bool ready() const { return !labels.empty() && bool(probabilities); }
};

inline double alignment_proxy(std::span<const float> image, int label, const Classifier& clf) {
  if (!clf.ready()) throw StateError("alignment_proxy: no classifier");
  const auto p = clf.probabilities(image);
  if (p.size() != clf.labels.size()) throw StateError("alignment_proxy: classifier output size mismatch");
  for (std::size_t k = 0; k < p.size(); ++k)
    if (clf.labels[k] == label) return p[k];
  throw ArgumentError("alignment_proxy: label " + std::to_string(label) + " unknown to the classifier");
}

/// Pixels followed by the 2-D DFT magnitudes of a square image. The magnitudes
/// do not change when a pattern is translated cyclically.
inline Eigen::VectorXd classifier_features(std::span<const float> x) {
  const auto side = std::size_t(std::lround(std::sqrt(double(x.size()))));
  if (side * side != x.size() || side == 0) throw ShapeError("classifier: image is not square");
  const auto n = Eigen::Index(side);
  Eigen::FFT<double> fft;
  std::vector<std::vector<std::complex<double>>> rows(side);
  std::vector<double> line(side);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) line[c] = x[r * side + c];
    fft.fwd(rows[r], line);
  }
  Eigen::VectorXd f(2 * n * n);
  std::vector<std::complex<double>> col(side), out;
  for (std::size_t c = 0; c < side; ++c) {
    for (std::size_t r = 0; r < side; ++r) col[r] = rows[r][c];
    fft.fwd(out, col);
    for (std::size_t r = 0; r < side; ++r) f[n * n + Eigen::Index(r * side + c)] = std::abs(out[r]) / double(side);
  }
  for (std::size_t i = 0; i < x.size(); ++i) f[Eigen::Index(i)] = x[i];
  return f;
}

/// Multinomial logistic regression on standardized classifier features.
struct SoftmaxModel {
  std::vector<int> labels;
  Eigen::MatrixXd weight;  ///< classes × features
  Eigen::VectorXd bias;
  Eigen::VectorXd feature_mean, feature_scale;

  Eigen::VectorXd features(std::span<const float> x) const {
    Eigen::VectorXd v = classifier_features(x);
    if (v.size() != weight.cols()) throw ShapeError("classifier: input size mismatch");
    return (v - feature_mean).cwiseQuotient(feature_scale);
  }

  std::vector<double> predict(std::span<const float> x) const {
    Eigen::VectorXd z = weight * features(x) + bias;
    z.array() -= z.maxCoeff();
    z = z.array().exp();
    z /= z.sum();
    return {z.data(), z.data() + z.size()};
  }
};

struct SoftmaxTrainConfig {
  std::size_t epochs = 300;
  double lr = 0.5;
  double l2 = 1e-3;
};

/// Full-batch gradient descent; deterministic.
inline SoftmaxModel train_softmax(const std::vector<std::pair<Matrix, int>>& data,
                                  const SoftmaxTrainConfig& cfg = {}) {
  if (data.empty()) throw ArgumentError("train_softmax: no data");
  SoftmaxModel m;
  for (const auto& [x, y] : data)
    if (std::find(m.labels.begin(), m.labels.end(), y) == m.labels.end()) m.labels.push_back(y);
  std::sort(m.labels.begin(), m.labels.end());
  const auto pixels = data.front().first.size();
  const auto C = Eigen::Index(m.labels.size()), N = Eigen::Index(data.size());
  const auto D = classifier_features(data.front().first.values()).size();
  Eigen::MatrixXd X(N, D);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(N, C);
  for (Eigen::Index n = 0; n < N; ++n) {
    const auto& [x, y] = data[std::size_t(n)];
    if (x.size() != pixels) throw ShapeError("train_softmax: ragged inputs");
    X.row(n) = classifier_features(x.values()).transpose();
    const auto k = std::find(m.labels.begin(), m.labels.end(), y) - m.labels.begin();
    Y(n, k) = 1.0;
  }
  m.feature_mean = X.colwise().mean().transpose();
  X.rowwise() -= m.feature_mean.transpose();
  m.feature_scale = (X.colwise().squaredNorm() / double(N)).cwiseSqrt().transpose();
  for (auto& v : m.feature_scale) v = v > 1e-9 ? v : 1.0;
  X = X.array().rowwise() / m.feature_scale.transpose().array();
  m.weight = Eigen::MatrixXd::Zero(C, D);
  m.bias = Eigen::VectorXd::Zero(C);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    Eigen::MatrixXd Z = (X * m.weight.transpose()).rowwise() + m.bias.transpose();
    for (Eigen::Index n = 0; n < N; ++n) {
      Z.row(n).array() -= Z.row(n).maxCoeff();
      Z.row(n) = Z.row(n).array().exp();
      Z.row(n) /= Z.row(n).sum();
    }
    const Eigen::MatrixXd G = (Z - Y) / double(N);
    m.weight -= cfg.lr * (G.transpose() * X + cfg.l2 * m.weight);
    m.bias -= cfg.lr * G.colwise().sum().transpose();
  }
  return m;
}

inline Classifier make_classifier(SoftmaxModel model) {
  auto shared = std::make_shared<SoftmaxModel>(std::move(model));
  return {shared->labels, [shared](std::span<const float> x) { return shared->predict(x); }};
}

/// Fraction of examples whose arg-max label matches.
inline double classifier_accuracy(const Classifier& clf, const std::vector<std::pair<Matrix, int>>& data) {
  if (!clf.ready()) throw StateError("accuracy: no classifier");
  std::size_t hit = 0;
  for (const auto& [x, y] : data) {
    const auto p = clf.probabilities(x.values());
    const auto k = std::size_t(std::max_element(p.begin(), p.end()) - p.begin());
    hit += clf.labels[k] == y;
  }
  return data.empty() ? 0.0 : double(hit) / double(data.size());
}

/// Clean (non-duplicated) training images with their class labels.
inline std::vector<std::pair<Matrix, int>> clean_training_examples(const Dataset& ds) {
  std::vector<std::pair<Matrix, int>> out;
  for (std::size_t i = 0; i < ds.items.size(); ++i)
    if (!ds.items[i].duplicated) out.emplace_back(image_to_row(ds.images[i]), ds.items[i].label);
  return out;
}

// ---------------------------------------------------------------------------
// Fréchet distance in a PCA feature space

struct FeatureBasis {
  Eigen::VectorXd mean;        ///< dim
  Eigen::MatrixXd components;  ///< k × dim, rows orthonormal, by decreasing variance
};

inline Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(Eigen::Index(r), Eigen::Index(c)) = m(r, c);
  return out;
}

inline Eigen::MatrixXd covariance(const Eigen::MatrixXd& X) {
  if (X.rows() < 2) throw ArgumentError("covariance: need at least two samples");
  const Eigen::MatrixXd c = X.rowwise() - X.colwise().mean();
  return (c.transpose() * c) / double(X.rows() - 1);
}

inline FeatureBasis fit_pca(const Matrix& images, std::size_t k) {
  if (k == 0 || k > images.cols()) throw ArgumentError("fit_pca: bad component count");
  const auto X = to_eigen(images);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariance(X));
  FeatureBasis b;
  b.mean = X.colwise().mean().transpose();
  b.components.resize(Eigen::Index(k), X.cols());
  for (std::size_t i = 0; i < k; ++i) {
    Eigen::VectorXd v = es.eigenvectors().col(X.cols() - 1 - Eigen::Index(i));
    // Fix the sign so the basis does not depend on solver internals.
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    b.components.row(Eigen::Index(i)) = v.transpose();
  }
  return b;
}

inline Eigen::MatrixXd project(const FeatureBasis& b, const Matrix& images) {
  if (Eigen::Index(images.cols()) != b.mean.size()) throw ShapeError("project: image size mismatch");
  return (to_eigen(images).rowwise() - b.mean.transpose()) * b.components.transpose();
}

struct FrechetResult {
  double distance = 0.0;
  bool regularized = false;
  std::vector<std::string> warnings;
};

namespace detail {

/// Symmetric PSD square root; eigenvalues clipped at 0.
inline Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd s = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  const Eigen::VectorXd r = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * r.asDiagonal() * es.eigenvectors().transpose();
}

inline bool degenerate(const Eigen::MatrixXd& cov) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()), Eigen::EigenvaluesOnly);
  const double top = std::max(es.eigenvalues().maxCoeff(), 0.0);
  return es.eigenvalues().minCoeff() <= 1e-12 * std::max(top, 1.0);
}

}  // namespace detail

/// ‖μa−μb‖² + Tr(Σa + Σb − 2(Σa^{1/2} Σb Σa^{1/2})^{1/2}).
inline FrechetResult frechet_gaussian(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a,
                                      const Eigen::VectorXd& mu_b, const Eigen::MatrixXd& cov_b) {
  if (mu_a.size() != mu_b.size() || cov_a.rows() != mu_a.size() || cov_b.rows() != mu_b.size() ||
      cov_a.cols() != cov_a.rows() || cov_b.cols() != cov_b.rows()) {
    throw ShapeError("frechet: inconsistent dimensions");
  }
  FrechetResult res;
  Eigen::MatrixXd a = cov_a, b = cov_b;
  if (detail::degenerate(a) || detail::degenerate(b)) {
    constexpr double ridge = 1e-6;
    a += ridge * Eigen::MatrixXd::Identity(a.rows(), a.cols());
    b += ridge * Eigen::MatrixXd::Identity(b.rows(), b.cols());
    res.regularized = true;
    res.warnings.push_back("frechet: degenerate covariance, added ridge 1e-6");
  }
  const Eigen::MatrixXd ra = detail::sqrt_psd(a);
  const Eigen::MatrixXd mid = ra * b * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (mid + mid.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (mu_a - mu_b).squaredNorm() + a.trace() + b.trace() - 2.0 * tr_sqrt;
  res.distance = std::max(d, 0.0);
  return res;
}

/// Fréchet distance between Gaussian fits of two image sets in PCA space.
inline FrechetResult frechet_proxy(const Matrix& set_a, const Matrix& set_b, const FeatureBasis& basis) {
  const auto k = std::size_t(basis.components.rows());
  if (set_a.rows() < k || set_b.rows() < k) {
    throw ArgumentError("frechet_proxy: need at least " + std::to_string(k) + " images per set");
  }
  const auto fa = project(basis, set_a), fb = project(basis, set_b);
  return frechet_gaussian(fa.colwise().mean().transpose(), covariance(fa), fb.colwise().mean().transpose(),
                          covariance(fb));
}

// ---------------------------------------------------------------------------
// Quality report

inline constexpr const char* kQualitySchema = "memsub.quality/1";

struct PromptQuality {
  int label = 0;
  bool duplicated = false;
  double mean_similarity = 0.0;  ///< to the prompt's training reference
  double max_similarity = 0.0;
  double alignment = 0.0;        ///< mean classifier confidence in the intended class
};

struct QualityReport {
  std::vector<PromptQuality> prompts;
  double frechet = 0.0;  ///< generated non-memorized samples vs held-out clean images
  std::vector<std::string> warnings;

  double mean_alignment(bool duplicated) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& p : prompts)
      if (p.duplicated == duplicated) s += p.alignment, ++n;
    return n ? s / double(n) : 0.0;
  }
};

inline void to_json(nlohmann::json& j, const PromptQuality& p) {
  j = {{"label", p.label},
       {"duplicated", p.duplicated},
       {"mean_similarity", p.mean_similarity},
       {"max_similarity", p.max_similarity},
       {"alignment", p.alignment}};
}
inline void from_json(const nlohmann::json& j, PromptQuality& p) {
  j.at("label").get_to(p.label);
  j.at("duplicated").get_to(p.duplicated);
  j.at("mean_similarity").get_to(p.mean_similarity);
  j.at("max_similarity").get_to(p.max_similarity);
  j.at("alignment").get_to(p.alignment);
}

inline nlohmann::json quality_to_json(const QualityReport& r) {
  return {{"schema", kQualitySchema}, {"prompts", r.prompts}, {"frechet", r.frechet}, {"warnings", r.warnings}};
}

inline QualityReport quality_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != kQualitySchema) throw FormatError("quality report: unsupported schema");
  QualityReport r;
  j.at("prompts").get_to(r.prompts);
  j.at("frechet").get_to(r.frechet);
  j.at("warnings").get_to(r.warnings);
  return r;
}

inline void write_quality_csv(std::ostream& os, const QualityReport& r) {
  os << "label,duplicated,mean_similarity,max_similarity,alignment\n";
  char buf[160];
  for (const auto& p : r.prompts) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.9g,%.9g\n", p.label, int(p.duplicated), p.mean_similarity,
                  p.max_similarity, p.alignment);
    os << buf;
  }
}

/// What quality evaluation needs besides the model under test.
struct QualityContext {
  const Dataset* dataset = nullptr;
  const Classifier* classifier = nullptr;
  const FeatureBasis* basis = nullptr;
  const Matrix* reference = nullptr;  ///< held-out clean images for the Fréchet term
  std::size_t tile = 4;
};

/// Scores generated samples. `samples` maps each label to its generations
/// (rows, [-1,1]). Duplicated prompts are compared against their training
/// image; class prompts against the nearest clean image of their class.
/// Only non-duplicated prompts feed the Fréchet term.
inline QualityReport evaluate_quality(const std::vector<std::pair<int, Matrix>>& samples,
                                      const QualityContext& ctx) {
  if (!ctx.dataset || !ctx.basis || !ctx.reference) throw StateError("evaluate_quality: incomplete context");
  if (!ctx.classifier || !ctx.classifier->ready()) throw StateError("evaluate_quality: no classifier");
  const auto& ds = *ctx.dataset;
  const auto side = ds.side();
  QualityReport rep;
  std::vector<const Matrix*> clean_rows;
  std::size_t clean_count = 0;
  for (const auto& [label, m] : samples) {
    PromptQuality q;
    q.label = label;
    const int dup = ds.duplicated_index(label);
    q.duplicated = dup >= 0;
    const int intended = q.duplicated ? ds.items[std::size_t(dup)].pattern_class + 1 : label;
    std::vector<Matrix> refs;
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
      const auto& it = ds.items[i];
      if (q.duplicated ? int(i) == dup : (!it.duplicated && it.label == label)) refs.push_back(image_to_row(ds.images[i]));
    }
    if (refs.empty()) throw ArgumentError("evaluate_quality: label " + std::to_string(label) + " has no training image");
    double sim_sum = 0.0, align_sum = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      double best = 0.0;
      for (const auto& ref : refs) best = std::max(best, similarity_proxy(m.row(r), ref.values(), side, ctx.tile));
      sim_sum += best;
      q.max_similarity = std::max(q.max_similarity, best);
      align_sum += alignment_proxy(m.row(r), intended, *ctx.classifier);
    }
    const double n = double(std::max<std::size_t>(m.rows(), 1));
    q.mean_similarity = sim_sum / n;
    q.alignment = align_sum / n;
    rep.prompts.push_back(q);
    if (!q.duplicated) {
      clean_rows.push_back(&m);
      clean_count += m.rows();
    }
  }
  if (clean_count) {
    Matrix gen(clean_count, ds.spec.image_size * ds.spec.image_size);
    std::size_t r = 0;
    for (const auto* m : clean_rows)
      for (std::size_t i = 0; i < m->rows(); ++i, ++r) std::copy(m->row(i).begin(), m->row(i).end(), gen.row(r).begin());
    auto fr = frechet_proxy(gen, *ctx.reference, *ctx.basis);
    rep.frechet = fr.distance;
    rep.warnings = std::move(fr.warnings);
  }
  return rep;
}

}  // namespace memsub
