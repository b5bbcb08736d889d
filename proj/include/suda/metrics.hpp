#pragma once

// Distances between feature clouds, accuracy, gate diagnostics, and a
// domain-separability probe.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "suda/autodiff.hpp"
#include "suda/errors.hpp"
#include "suda/models.hpp"
#include "suda/objectives.hpp"
#include "suda/rng.hpp"
#include "suda/synth_data.hpp"

namespace suda::metrics {

using ad::Shape;
using ad::Tensor;

// count x dim, one embedding per row.
using FeatureCloud = Eigen::MatrixXd;

inline FeatureCloud to_cloud(const Tensor& features) {
  if (features.rank() != 2) throw DimensionError("feature cloud must be a matrix, got " + ad::shape_string(features.shape()));
  FeatureCloud out(features.extent(0), features.extent(1));
  for (std::size_t r = 0; r < features.extent(0); ++r)
    for (std::size_t c = 0; c < features.extent(1); ++c) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = features.at(r, c);
  return out;
}

inline FeatureCloud stack(const FeatureCloud& a, const FeatureCloud& b) {
  if (a.cols() != b.cols()) throw DimensionError("cannot stack clouds of different widths");
  FeatureCloud out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

namespace detail {

inline void require_finite(const FeatureCloud& x, const char* op) {
  if (!x.allFinite()) throw DataError(std::string(op) + ": feature cloud has non-finite entries");
}

inline double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace detail

// Gaussian-kernel MMD, biased V-statistic, bandwidth = median pairwise distance
// of the pooled cloud. Returns the square root.
inline double mmd(const FeatureCloud& a, const FeatureCloud& b) {
  if (a.rows() < 1 || b.rows() < 1) throw DataError("mmd: each cloud needs at least one sample");
  if (a.cols() != b.cols()) {
    throw DimensionError("mmd: widths " + std::to_string(a.cols()) + " and " + std::to_string(b.cols()) + " differ");
  }
  detail::require_finite(a, "mmd");
  detail::require_finite(b, "mmd");
  const FeatureCloud z = stack(a, b);
  const Eigen::Index n = z.rows();
  const Eigen::VectorXd sq = z.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = (sq.replicate(1, n) + sq.transpose().replicate(n, 1) - 2.0 * z * z.transpose()).cwiseMax(0.0);
  d2 = 0.5 * (d2 + d2.transpose()).eval();
  d2.diagonal().setZero();

  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) dists.push_back(std::sqrt(d2(i, j)));
  double sigma = dists.empty() ? 0.0 : detail::median(std::move(dists));
  if (!(sigma > 0)) sigma = 1.0;

  const Eigen::MatrixXd k = (-d2 / (2.0 * sigma * sigma)).array().exp().matrix();
  const Eigen::Index na = a.rows(), nb = b.rows();
  const double kaa = k.topLeftCorner(na, na).sum() / static_cast<double>(na * na);
  const double kbb = k.bottomRightCorner(nb, nb).sum() / static_cast<double>(nb * nb);
  // Average of both off-diagonal blocks keeps the value symmetric in (a, b).
  const double kab = 0.5 * (k.topRightCorner(na, nb).sum() + k.bottomLeftCorner(nb, na).sum()) /
                     static_cast<double>(na * nb);
  return std::sqrt(std::max(0.0, kaa + kbb - 2.0 * kab));
}

struct Moments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline constexpr double kCovarianceShrinkage = 1e-6;
inline constexpr double kEigenFloor = 1e-12;

// Sample mean and unbiased covariance plus shrinkage * I.
inline Moments moments(const FeatureCloud& x) {
  if (x.rows() < 2) throw DataError("covariance needs at least two samples, got " + std::to_string(x.rows()));
  detail::require_finite(x, "moments");
  Moments m;
  m.mean = x.colwise().mean().transpose();
  const FeatureCloud centered = x.rowwise() - m.mean.transpose();
  m.cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  m.cov.diagonal().array() += kCovarianceShrinkage;
  return m;
}

namespace detail {

inline Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigen(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) {
    std::ostringstream os;
    os << "frechet_distance: eigendecomposition of " << what << " did not converge (size " << m.rows()
       << ", max |entry| " << m.cwiseAbs().maxCoeff() << ")";
    throw NumericError(os.str());
  }
  return es;
}

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  const auto es = eigen(m, what);
  const Eigen::VectorXd roots = es.eigenvalues().unaryExpr([](double v) { return v < kEigenFloor ? 0.0 : std::sqrt(v); });
  return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)). The trace of the product
// root is taken from the symmetric form S_a^(1/2) S_b S_a^(1/2).
inline double frechet_distance(const Moments& a, const Moments& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != a.mean.size() || b.cov.rows() != b.mean.size()) {
    throw DimensionError("frechet_distance: moment dimensions disagree");
  }
  const Eigen::MatrixXd root_a = detail::psd_sqrt(a.cov, "covariance");
  const Eigen::MatrixXd inner = root_a * b.cov * root_a;
  const auto es = detail::eigen(inner, "covariance product");
  double cross = 0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double v = es.eigenvalues()(i);
    if (v >= kEigenFloor) cross += std::sqrt(v);
  }
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
  if (!std::isfinite(d)) throw NumericError("frechet_distance: non-finite result");
  return std::max(0.0, d);
}

inline double frechet_distance(const FeatureCloud& a, const FeatureCloud& b) {
  if (a.cols() != b.cols()) throw DimensionError("frechet_distance: widths differ");
  return frechet_distance(moments(a), moments(b));
}

inline double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
  if (preds.size() != labels.size()) {
    throw DataError("accuracy: " + std::to_string(preds.size()) + " predictions for " + std::to_string(labels.size()) +
                    " labels");
  }
  if (preds.empty()) throw DataError("accuracy: empty batch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

// Row-wise argmax of a B x K matrix; ties go to the lowest index.
inline std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  if (scores.rank() != 2) throw DimensionError("argmax_rows: expected a matrix");
  std::vector<std::size_t> out(scores.extent(0));
  for (std::size_t r = 0; r < out.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < scores.extent(1); ++c)
      if (scores.at(r, c) > scores.at(r, best)) best = c;
    out[r] = best;
  }
  return out;
}

struct GateBandReport {
  std::size_t channels = 0;
  std::size_t bands = 0;
  std::vector<double> band_mean;     // per band, over samples and channels
  std::vector<double> channel_band;  // C x N, over samples
  std::vector<bool> variant;         // ground-truth perturbed bands
  std::optional<double> variant_mean;
  std::optional<double> invariant_mean;
};

// gains: B x C x N gate weights of the samples; perturbed: ground-truth band set.
inline GateBandReport gate_band_report(const Tensor& gains, std::span<const std::uint16_t> perturbed) {
  if (gains.rank() != 3 || gains.extent(0) == 0) {
    throw DimensionError("gate_band_report: expected BxCxN gains, got " + ad::shape_string(gains.shape()));
  }
  const std::size_t batch = gains.extent(0), c_count = gains.extent(1), n_bands = gains.extent(2);
  GateBandReport r;
  r.channels = c_count;
  r.bands = n_bands;
  r.channel_band.assign(c_count * n_bands, 0.0);
  r.band_mean.assign(n_bands, 0.0);
  r.variant.assign(n_bands, false);
  for (auto b : perturbed) {
    if (b >= n_bands) throw ConfigError("perturbed band " + std::to_string(b) + " outside the gate's band range");
    r.variant[b] = true;
  }
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < c_count * n_bands; ++i) r.channel_band[i] += gains[b * c_count * n_bands + i];
  for (auto& v : r.channel_band) v /= static_cast<double>(batch);
  for (std::size_t n = 0; n < n_bands; ++n) {
    for (std::size_t c = 0; c < c_count; ++c) r.band_mean[n] += r.channel_band[c * n_bands + n];
    r.band_mean[n] /= static_cast<double>(c_count);
  }
  double vs = 0, is = 0;
  std::size_t vn = 0, in = 0;
  for (std::size_t n = 0; n < n_bands; ++n) {
    if (r.variant[n]) {
      vs += r.band_mean[n];
      ++vn;
    } else {
      is += r.band_mean[n];
      ++in;
    }
  }
  if (vn) r.variant_mean = vs / static_cast<double>(vn);
  if (in) r.invariant_mean = is / static_cast<double>(in);
  return r;
}

inline void write_gate_band_report(const GateBandReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(17);
  out << "band,variant,mean_gate";
  for (std::size_t c = 0; c < r.channels; ++c) out << ",channel_" << c;
  out << '\n';
  for (std::size_t n = 0; n < r.bands; ++n) {
    out << n << ',' << (r.variant[n] ? 1 : 0) << ',' << r.band_mean[n];
    for (std::size_t c = 0; c < r.channels; ++c) out << ',' << r.channel_band[c * r.bands + n];
    out << '\n';
  }
}

// Features as CSV: sample_id, domain, f0 ... f{dim-1}.
inline void export_embeddings(const std::filesystem::path& path, const std::vector<std::pair<std::string, const FeatureCloud*>>& clouds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(9);
  const Eigen::Index dim = clouds.empty() ? 0 : clouds.front().second->cols();
  out << "sample_id,domain";
  for (Eigen::Index j = 0; j < dim; ++j) out << ",f" << j;
  out << '\n';
  for (const auto& [domain, cloud] : clouds) {
    if (cloud->cols() != dim) throw DimensionError("export_embeddings: clouds of different widths");
    for (Eigen::Index i = 0; i < cloud->rows(); ++i) {
      out << i << ',' << domain;
      for (Eigen::Index j = 0; j < dim; ++j) out << ',' << (*cloud)(i, j);
      out << '\n';
    }
  }
}

// Domain probe: a one-hidden-layer network on raw pixels learns to tell source
// from target on the first half of each set and is scored on the second half.
struct ProbeConfig {
  std::size_t hidden = 32;
  std::size_t epochs = 8;
  std::size_t batch = 32;
  double lr = 0.005;
  double momentum = 0.9;
  std::uint64_t seed = 7;
};

inline double domain_probe_accuracy(const data::Dataset& source, const data::Dataset& target, const ProbeConfig& cfg = {}) {
  if (source.image_size() != target.image_size()) throw DataError("probe: source and target image sizes differ");
  const std::size_t n = std::min(source.count, target.count);
  if (n < 4) throw DataError("probe: need at least 4 images per domain");
  const std::size_t half = n / 2;
  Rng rng(cfg.seed, "probe/init");
  models::Mlp net = models::make_mlp({source.image_size(), cfg.hidden, 1}, rng);
  models::Mlp velocity = models::make_zero_mlp({source.image_size(), cfg.hidden, 1});
  const ad::Sgd sgd{cfg.lr, cfg.momentum};

  // (domain, index) pairs; domain 1 = source.
  std::vector<std::pair<int, std::size_t>> train;
  for (std::size_t i = 0; i < half; ++i) {
    train.emplace_back(1, i);
    train.emplace_back(0, i);
  }
  // Pixels are shifted to [-0.5, 0.5] so the rectifiers start unsaturated.
  auto inputs = [](const data::Dataset& d, const std::vector<std::size_t>& idx) {
    return ad::add_scalar(models::flatten_images(d.batch(idx)), -0.5);
  };
  auto gather = [&](std::span<const std::pair<int, std::size_t>> items) {
    std::vector<std::size_t> si, ti;
    for (const auto& [d, i] : items) (d ? si : ti).push_back(i);
    return std::pair{si, ti};
  };
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng order(cfg.seed, "probe/epoch", epoch);
    order.shuffle(train);
    for (std::size_t start = 0; start + 1 < train.size(); start += cfg.batch) {
      const auto items = std::span(train).subspan(start, std::min(cfg.batch, train.size() - start));
      const auto [si, ti] = gather(items);
      if (si.empty() || ti.empty()) continue;
      ad::Tape tape;
      const models::Mlp w = net.watched(tape);
      const Tensor ls = models::mlp_forward(inputs(source, si), w).output;
      const Tensor lt = models::mlp_forward(inputs(target, ti), w).output;
      const Tensor loss = ad::neg(obj::adversarial_loss_from_logits(ls, lt));
      const auto grads = tape.backward(loss);
      for (std::size_t l = 0; l < net.weights.size(); ++l) {
        sgd.step(net.weights[l], grads.of(w.weights[l]), velocity.weights[l]);
        sgd.step(net.biases[l], grads.of(w.biases[l]), velocity.biases[l]);
      }
    }
  }
  std::size_t hits = 0, total = 0;
  for (std::size_t start = half; start < n; start += 128) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + 128); ++i) idx.push_back(i);
    const Tensor ls = models::mlp_forward(inputs(source, idx), net).output;
    const Tensor lt = models::mlp_forward(inputs(target, idx), net).output;
    for (double v : ls.values()) hits += v > 0;
    for (double v : lt.values()) hits += v <= 0;
    total += 2 * idx.size();
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace suda::metrics
