#pragma once

// Loss and similarity primitives for pixel contrastive-consistent training.
//
// Every function here is pure. Gradients are hand-derived; the test suite
// checks each one against central finite differences.

#include <cstdint>
#include <span>
#include <vector>

namespace pixcon {

using Vector = std::vector<double>;
using VectorView = std::span<const double>;

inline constexpr double kNormEpsilon = 1e-12;
inline constexpr double kDefaultTemperature = 0.07;
inline constexpr double kDefaultSharpenTemperature = 0.5;
inline constexpr double kDefaultLambdaContrast = 0.3;
inline constexpr double kDefaultLambdaConsistency = 1.0;

/// uᵀv / ((‖u‖ + ε)(‖v‖ + ε)) with ε = 1e-12.
///
/// Two all-zero inputs return 0; when `degenerate` is given it is set to
/// true in that case (and false otherwise).
double cosine_similarity(VectorView u, VectorView v, bool* degenerate = nullptr);

struct CosineGrad {
  Vector du;
  Vector dv;
};

/// Partial derivatives of cosine_similarity with respect to both arguments.
CosineGrad cosine_similarity_grad(VectorView u, VectorView v);

/// softmax(logits / temperature), max-subtracted.
Vector softmax_sharpen(VectorView logits, double temperature = 1.0);

inline Vector softmax(VectorView logits) { return softmax_sharpen(logits, 1.0); }

/// 1 − cos(weak, strong). The weak side is a constant target.
double consistency_loss(VectorView yhat_weak, VectorView yhat_strong);

struct ConsistencyGrad {
  Vector weak;    // identically zero: stop-gradient
  Vector strong;
};

ConsistencyGrad consistency_grad(VectorView yhat_weak, VectorView yhat_strong);

// Arguments of the InfoNCE loss for one anchor. Views only; the caller owns
// the storage.
struct ContrastiveTerm {
  VectorView anchor;
  VectorView positive;
  std::vector<VectorView> negatives;
  double temperature = kDefaultTemperature;
};

/// −log( e^{s⁺/τ} / (e^{s⁺/τ} + Σₙ e^{sₙ/τ}) ) with s = cosine similarity,
/// evaluated as logsumexp(s/τ) − s⁺/τ.
double pixel_contrastive_loss(const ContrastiveTerm& term);

struct ContrastiveGrad {
  Vector anchor;
  Vector positive;
  std::vector<Vector> negatives;
};

ContrastiveGrad pixel_contrastive_grad(const ContrastiveTerm& term);

/// Loss value and gradients in one pass (the trainer's hot path).
double pixel_contrastive_loss_and_grad(const ContrastiveTerm& term,
                                       ContrastiveGrad& grad);

/// −log softmax(logits)[label]; returns 0 for kIgnoreLabel.
double supervised_ce(VectorView logits, int label);

/// ∂CE/∂logits = softmax − onehot(label); zeros for kIgnoreLabel.
Vector supervised_ce_grad(VectorView logits, int label);

struct LossBreakdown {
  double supervised_ce = 0.0;
  double contrastive = 0.0;
  double consistency = 0.0;
  double total = 0.0;
  double lambda_contrast = 0.0;
  double lambda_consistency = 0.0;
};

/// total = sup + λ1·contrast + λ2·consist. Throws InvalidParameter on
/// negative coefficients.
LossBreakdown combine_losses(double sup, double contrast, double consist,
                             double lambda_contrast, double lambda_consistency);

/// InfoNCE on per-image spatially pooled features; `negatives` are pooled
/// features of other images.
double image_contrastive_loss(VectorView weak_pooled, VectorView strong_pooled,
                              const std::vector<VectorView>& negatives,
                              double temperature = kDefaultTemperature);

/// 1 − cos(z_weak, z_strong) on features; weak side is a constant.
double pixel_feature_consistency(VectorView z_weak, VectorView z_strong);

/// Gradient of pixel_feature_consistency with respect to z_strong.
Vector pixel_feature_consistency_grad(VectorView z_weak, VectorView z_strong);

/// Cross-entropy of softmax(strong_logits) against the soft target
/// yhat_weak: −Σ_c p_c log softmax(strong)_c.
double output_ce_consistency(VectorView yhat_weak, VectorView strong_logits);

/// ∂/∂strong_logits = softmax(strong) − yhat_weak (target sums to one).
Vector output_ce_consistency_grad(VectorView yhat_weak, VectorView strong_logits);

}  // namespace pixcon
