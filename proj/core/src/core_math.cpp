#include "pixcon/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "pixcon/errors.hpp"
#include "pixcon/tensor.hpp"

namespace pixcon {
namespace {

double dot(VectorView u, VectorView v) {
  return std::inner_product(u.begin(), u.end(), v.begin(), 0.0);
}

double norm2(VectorView u) { return std::sqrt(dot(u, u)); }

void require_same_dim(VectorView u, VectorView v, const char* what) {
  if (u.size() != v.size()) {
    throw InvalidParameter(std::string(what) + ": dimension mismatch (" +
                           std::to_string(u.size()) + " vs " +
                           std::to_string(v.size()) + ")");
  }
}

void require_temperature(double t, const char* what) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw InvalidParameter(std::string(what) + ": temperature must be > 0");
  }
}

// Adds `scale * dcos(u, v)/du` into `out`.
void accumulate_cos_grad_u(VectorView u, VectorView v, double scale,
                           std::span<double> out) {
  const double nu = norm2(u);
  const double nv = norm2(v);
  const double a = nu + kNormEpsilon;
  const double b = nv + kNormEpsilon;
  const double uv = dot(u, v);
  const double c1 = scale / (a * b);
  const double c2 = nu > 0.0 ? scale * uv / (a * a * b * nu) : 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) out[k] += c1 * v[k] - c2 * u[k];
}

void validate_term(const ContrastiveTerm& term) {
  if (term.anchor.empty()) throw InvalidParameter("contrastive term: D must be >= 1");
  require_same_dim(term.anchor, term.positive, "contrastive term");
  if (term.negatives.empty()) {
    throw InvalidParameter("contrastive term: need at least one negative");
  }
  for (const auto& n : term.negatives) {
    require_same_dim(term.anchor, n, "contrastive term");
  }
  require_temperature(term.temperature, "contrastive term");
}

// Scaled similarities s_k/τ with k = 0 the positive; returns logsumexp.
double scaled_similarities(const ContrastiveTerm& term, Vector& logits) {
  logits.resize(term.negatives.size() + 1);
  logits[0] = cosine_similarity(term.anchor, term.positive) / term.temperature;
  for (std::size_t n = 0; n < term.negatives.size(); ++n) {
    logits[n + 1] =
        cosine_similarity(term.anchor, term.negatives[n]) / term.temperature;
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - m);
  return m + std::log(sum);
}

}  // namespace

double cosine_similarity(VectorView u, VectorView v, bool* degenerate) {
  require_same_dim(u, v, "cosine_similarity");
  const double nu = norm2(u);
  const double nv = norm2(v);
  if (degenerate) *degenerate = (nu == 0.0 && nv == 0.0);
  if (nu == 0.0 && nv == 0.0) return 0.0;
  return dot(u, v) / ((nu + kNormEpsilon) * (nv + kNormEpsilon));
}

CosineGrad cosine_similarity_grad(VectorView u, VectorView v) {
  require_same_dim(u, v, "cosine_similarity_grad");
  CosineGrad g{Vector(u.size(), 0.0), Vector(v.size(), 0.0)};
  accumulate_cos_grad_u(u, v, 1.0, g.du);
  accumulate_cos_grad_u(v, u, 1.0, g.dv);
  return g;
}

Vector softmax_sharpen(VectorView logits, double temperature) {
  require_temperature(temperature, "softmax_sharpen");
  if (logits.empty()) throw InvalidParameter("softmax_sharpen: empty logits");
  const double m = *std::max_element(logits.begin(), logits.end());
  Vector out(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp((logits[k] - m) / temperature);
    sum += out[k];
  }
  for (double& p : out) p /= sum;
  return out;
}

double consistency_loss(VectorView yhat_weak, VectorView yhat_strong) {
  require_same_dim(yhat_weak, yhat_strong, "consistency_loss");
  return 1.0 - cosine_similarity(yhat_weak, yhat_strong);
}

ConsistencyGrad consistency_grad(VectorView yhat_weak, VectorView yhat_strong) {
  require_same_dim(yhat_weak, yhat_strong, "consistency_grad");
  ConsistencyGrad g{Vector(yhat_weak.size(), 0.0),
                    Vector(yhat_strong.size(), 0.0)};
  accumulate_cos_grad_u(yhat_strong, yhat_weak, -1.0, g.strong);
  return g;
}

double pixel_contrastive_loss(const ContrastiveTerm& term) {
  validate_term(term);
  Vector logits;
  const double lse = scaled_similarities(term, logits);
  // lse >= logits[0] always; clamp the rounding-level negative case.
  return std::max(lse - logits[0], 0.0);
}

double pixel_contrastive_loss_and_grad(const ContrastiveTerm& term,
                                       ContrastiveGrad& grad) {
  validate_term(term);
  Vector logits;
  const double lse = scaled_similarities(term, logits);
  const std::size_t d = term.anchor.size();
  grad.anchor.assign(d, 0.0);
  grad.positive.assign(d, 0.0);
  grad.negatives.resize(term.negatives.size());

  // dL/ds_k = (softmax_k − [k == 0]) / τ
  const double inv_t = 1.0 / term.temperature;
  const double g0 = (std::exp(logits[0] - lse) - 1.0) * inv_t;
  accumulate_cos_grad_u(term.anchor, term.positive, g0, grad.anchor);
  accumulate_cos_grad_u(term.positive, term.anchor, g0, grad.positive);
  for (std::size_t n = 0; n < term.negatives.size(); ++n) {
    const double gn = std::exp(logits[n + 1] - lse) * inv_t;
    grad.negatives[n].assign(d, 0.0);
    accumulate_cos_grad_u(term.anchor, term.negatives[n], gn, grad.anchor);
    accumulate_cos_grad_u(term.negatives[n], term.anchor, gn,
                          grad.negatives[n]);
  }
  return std::max(lse - logits[0], 0.0);
}

ContrastiveGrad pixel_contrastive_grad(const ContrastiveTerm& term) {
  ContrastiveGrad g;
  pixel_contrastive_loss_and_grad(term, g);
  return g;
}

namespace {

void validate_label(VectorView logits, int label) {
  if (label == kIgnoreLabel) return;
  if (label < 0 || label >= static_cast<int>(logits.size())) {
    throw InvalidParameter("supervised_ce: label " + std::to_string(label) +
                           " out of range for C=" +
                           std::to_string(logits.size()));
  }
}

double log_sum_exp(VectorView v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

double supervised_ce(VectorView logits, int label) {
  validate_label(logits, label);
  if (label == kIgnoreLabel) return 0.0;
  return std::max(log_sum_exp(logits) - logits[label], 0.0);
}

Vector supervised_ce_grad(VectorView logits, int label) {
  validate_label(logits, label);
  if (label == kIgnoreLabel) return Vector(logits.size(), 0.0);
  Vector g = softmax(logits);
  g[label] -= 1.0;
  return g;
}

LossBreakdown combine_losses(double sup, double contrast, double consist,
                             double lambda_contrast, double lambda_consistency) {
  if (!(lambda_contrast >= 0.0) || !(lambda_consistency >= 0.0)) {
    throw InvalidParameter("combine_losses: coefficients must be >= 0");
  }
  LossBreakdown b;
  b.supervised_ce = sup;
  b.contrastive = contrast;
  b.consistency = consist;
  b.lambda_contrast = lambda_contrast;
  b.lambda_consistency = lambda_consistency;
  b.total = sup + lambda_contrast * contrast + lambda_consistency * consist;
  return b;
}

double image_contrastive_loss(VectorView weak_pooled, VectorView strong_pooled,
                              const std::vector<VectorView>& negatives,
                              double temperature) {
  return pixel_contrastive_loss(
      ContrastiveTerm{weak_pooled, strong_pooled, negatives, temperature});
}

double pixel_feature_consistency(VectorView z_weak, VectorView z_strong) {
  return 1.0 - cosine_similarity(z_weak, z_strong);
}

Vector pixel_feature_consistency_grad(VectorView z_weak, VectorView z_strong) {
  return consistency_grad(z_weak, z_strong).strong;
}

double output_ce_consistency(VectorView yhat_weak, VectorView strong_logits) {
  require_same_dim(yhat_weak, strong_logits, "output_ce_consistency");
  const double lse = log_sum_exp(strong_logits);
  double loss = 0.0;
  for (std::size_t c = 0; c < yhat_weak.size(); ++c) {
    loss -= yhat_weak[c] * (strong_logits[c] - lse);
  }
  return loss;
}

Vector output_ce_consistency_grad(VectorView yhat_weak, VectorView strong_logits) {
  require_same_dim(yhat_weak, strong_logits, "output_ce_consistency_grad");
  Vector g = softmax(strong_logits);
  for (std::size_t c = 0; c < g.size(); ++c) g[c] -= yhat_weak[c];
  return g;
}

}  // namespace pixcon
