#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "suda/autodiff.hpp"
#include "suda/errors.hpp"

namespace suda::obj {

using ad::Shape;
using ad::Tensor;

struct LossWeights {
  double lambda_c = 0.1;    // adversarial balance
  double lambda_s = 1.0;    // self-supervision balance
  double dis_weight = 1.0;  // share of L_dis inside L_self
  double sim_weight = 1.0;  // share of L_sim inside L_self

  void validate() const {
    for (double v : {lambda_c, lambda_s, dis_weight, sim_weight}) {
      if (!std::isfinite(v) || v < 0) throw ConfigError("loss weights must be finite and non-negative");
    }
  }
};

struct LossBreakdown {
  double sup = 0;
  double adv = 0;
  double dis = 0;
  double sim = 0;
  double self = 0;   // dis_weight * dis + sim_weight * sim
  double total = 0;  // sup - lambda_c * adv + lambda_s * self
};

// row b of a B x K tensor at column labels[b] -> B.
inline Tensor pick(const Tensor& x, std::span<const std::size_t> labels) {
  if (x.rank() != 2 || x.extent(0) != labels.size()) {
    throw DimensionError("pick: " + ad::shape_string(x.shape()) + " with " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t rows = x.extent(0), cols = x.extent(1);
  std::vector<std::size_t> idx(labels.begin(), labels.end());
  for (std::size_t label : idx) {
    if (label >= cols) throw DataError("label " + std::to_string(label) + " outside [0, " + std::to_string(cols) + ")");
  }
  Tensor out(Shape{rows});
  for (std::size_t b = 0; b < rows; ++b) out[b] = x[b * cols + idx[b]];
  return ad::Tape::record(std::move(out), {&x}, [&] {
    return ad::Adjoint([idx = std::move(idx), cols](std::span<const double> g, ad::GradSink& sink) {
      auto gx = sink.buffer(0);
      for (std::size_t b = 0; b < idx.size(); ++b) gx[b * cols + idx[b]] += g[b];
    });
  });
}

// Euclidean norm of each row of a B x K tensor -> B. Gradient at a zero row is 0.
inline Tensor row_norms(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("row_norms: expected a matrix, got " + ad::shape_string(x.shape()));
  const std::size_t rows = x.extent(0), cols = x.extent(1);
  Tensor out(Shape{rows});
  for (std::size_t b = 0; b < rows; ++b) {
    double acc = 0;
    for (std::size_t k = 0; k < cols; ++k) acc += x[b * cols + k] * x[b * cols + k];
    out[b] = std::sqrt(acc);
  }
  return ad::Tape::record(out, {&x}, [&] {
    return ad::Adjoint([xv = x.vector(), nv = out.vector(), cols](std::span<const double> g, ad::GradSink& sink) {
      auto gx = sink.buffer(0);
      for (std::size_t b = 0; b < nv.size(); ++b) {
        if (nv[b] == 0.0) continue;
        for (std::size_t k = 0; k < cols; ++k) gx[b * cols + k] += g[b] * xv[b * cols + k] / nv[b];
      }
    });
  });
}

// Mean negative log-likelihood of the labels under `probs` (B x K).
inline Tensor supervised_loss(const Tensor& probs, std::span<const std::size_t> labels) {
  return ad::neg(ad::mean(ad::log(pick(probs, labels))));
}

// Same value from logits via log-softmax; used on the training path.
inline Tensor supervised_loss_from_logits(const Tensor& logits, std::span<const std::size_t> labels) {
  return ad::neg(ad::mean(pick(ad::log_softmax(logits, 1), labels)));
}

inline void require_open_unit(const Tensor& scores, const char* which) {
  for (double s : scores.values()) {
    if (!(s > 0.0 && s < 1.0)) {
      throw DomainError(std::string("adversarial loss: ") + which + " score " + std::to_string(s) + " outside (0,1)");
    }
  }
}

// E[log C_d(src)] + E[log(1 - C_d(tgt))]; at most 0.
inline Tensor adversarial_loss(const Tensor& src_scores, const Tensor& tgt_scores) {
  require_open_unit(src_scores, "source");
  require_open_unit(tgt_scores, "target");
  return ad::add(ad::mean(ad::log(src_scores)), ad::mean(ad::log(ad::add_scalar(ad::neg(tgt_scores), 1.0))));
}

// adversarial_loss evaluated on discriminator logits without forming the scores.
inline Tensor adversarial_loss_from_logits(const Tensor& src_logits, const Tensor& tgt_logits) {
  return ad::add(ad::mean(ad::log_sigmoid(src_logits)), ad::mean(ad::log_sigmoid(ad::neg(tgt_logits))));
}

// What the transformers minimize against C_d: binary cross-entropy with the
// domain labels swapped, so target images should read as source and vice versa.
inline Tensor confusion_loss_from_logits(const Tensor& src_logits, const Tensor& tgt_logits) {
  return ad::neg(ad::add(ad::mean(ad::log_sigmoid(tgt_logits)), ad::mean(ad::log_sigmoid(ad::neg(src_logits)))));
}

// Cosine similarity of two parameter vectors, in [-1, 1].
inline Tensor discrepancy_loss(const Tensor& theta1, const Tensor& theta2) {
  if (theta1.rank() != 1 || theta1.shape() != theta2.shape()) {
    throw DimensionError("discrepancy_loss: " + ad::shape_string(theta1.shape()) + " vs " +
                         ad::shape_string(theta2.shape()));
  }
  const Tensor n1sq = ad::dot(theta1, theta1);
  const Tensor n2sq = ad::dot(theta2, theta2);
  if (n1sq.item() == 0.0 || n2sq.item() == 0.0) {
    throw DegenerateInputError("discrepancy_loss: zero parameter vector has no direction");
  }
  return ad::div(ad::dot(theta1, theta2), ad::sqrt(ad::mul(n1sq, n2sq)));
}

// Batch mean of the per-sample Euclidean distance between prediction vectors.
inline Tensor similarity_loss(const Tensor& p1, const Tensor& p2) {
  if (p1.shape() != p2.shape() || p1.rank() != 2) {
    throw DimensionError("similarity_loss: " + ad::shape_string(p1.shape()) + " vs " + ad::shape_string(p2.shape()));
  }
  return ad::mean(row_norms(ad::sub(p1, p2)));
}

struct LossParts {
  double sup = 0;
  double adv = 0;
  double dis = 0;
  double sim = 0;
};

inline LossBreakdown total_objective(const LossParts& parts, const LossWeights& w) {
  const std::pair<const char*, double> named[] = {{"L_sup", parts.sup}, {"L_adv", parts.adv}, {"L_dis", parts.dis}, {"L_sim", parts.sim}};
  for (const auto& [name, value] : named) {
    if (!std::isfinite(value)) throw NumericError(std::string("non-finite loss term ") + name);
  }
  LossBreakdown out;
  out.sup = parts.sup;
  out.adv = parts.adv;
  out.dis = parts.dis;
  out.sim = parts.sim;
  out.self = w.dis_weight * parts.dis + w.sim_weight * parts.sim;
  out.total = parts.sup - w.lambda_c * parts.adv + w.lambda_s * out.self;
  return out;
}

}  // namespace suda::obj
