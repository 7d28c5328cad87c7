#include "pixcon/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "pixcon/errors.hpp"
#include "pixcon/sampling.hpp"

namespace pixcon {
namespace {

void scale(PixelMap& m, double s) {
  for (double& v : m.values) v *= s;
}

// Rowwise sharpened softmax of a logit map.
ProbMap sharpen_map(const PixelMap& logits, double temperature) {
  ProbMap out(logits.height, logits.width, logits.depth);
  for (int p = 0; p < logits.pixels(); ++p) {
    const Vector sm = softmax_sharpen(logits.pixel(p), temperature);
    std::copy(sm.begin(), sm.end(), out.pixel(p).begin());
  }
  return out;
}

// Pseudo-label vectors at feature resolution, renormalized against rounding.
ProbMap downsample_probs(const ProbMap& probs, int h, int w) {
  ProbMap out = resize_bilinear(probs, h, w);
  for (int p = 0; p < out.pixels(); ++p) {
    auto px = out.pixel(p);
    double s = 0.0;
    for (double v : px) s += v;
    for (double& v : px) v /= s;
  }
  return out;
}

// ∂L/∂logits from ∂L/∂probs through a softmax: p ⊙ (g − pᵀg).
void softmax_backward(std::span<const double> p, std::span<const double> g,
                      double weight, std::span<double> dlogits) {
  double pg = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) pg += p[c] * g[c];
  for (std::size_t c = 0; c < p.size(); ++c) dlogits[c] += weight * p[c] * (g[c] - pg);
}

struct FeatureLossResult {
  double value = 0.0;
  double fnr = kNaN;
};

FeatureLossResult pixel_contrast(const TrainConfig& config, const StepInputs& inputs,
                                 const FrozenWeak& frozen,
                                 const std::vector<BranchOutput>& strong,
                                 const std::vector<FeatureMap>& weak_proj,
                                 std::vector<FeatureMap>& dweak,
                                 std::vector<FeatureMap>& dstrong,
                                 StepDiagnostics& diag) {
  FeatureLossResult result;
  const std::size_t batch = strong.size();
  const int h = weak_proj[0].height;
  const int w = weak_proj[0].width;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t per_view = batch * hw;
  const std::size_t m = 2 * per_view;
  const int classes = strong[0].probs.depth;

  CandidatePool pool;
  pool.num_classes = classes;
  pool.image_id.resize(m);
  pool.probs.resize(m * classes);
  std::vector<int> gt(m);
  for (std::size_t b = 0; b < batch; ++b) {
    const ProbMap weak_pl = downsample_probs(frozen.targets[b], h, w);
    const ProbMap strong_pl = downsample_probs(
        sharpen_map(strong[b].logits, config.sharpen_temperature), h, w);
    const LabelMap gt_small = resize_nearest(inputs.unlabeled[b].mask, h, w);
    for (std::size_t p = 0; p < hw; ++p) {
      for (int view = 0; view < 2; ++view) {
        const std::size_t j = view * per_view + b * hw + p;
        pool.image_id[j] = static_cast<int>(b);
        const auto src = view == 0 ? weak_pl.pixel(static_cast<int>(p))
                                   : strong_pl.pixel(static_cast<int>(p));
        std::copy(src.begin(), src.end(), pool.probs.begin() + j * classes);
        gt[j] = gt_small.labels[p];
      }
    }
  }
  pool.gt_label = std::move(gt);
  std::vector<std::size_t> partner(m);
  for (std::size_t j = 0; j < m; ++j) partner[j] = (j + per_view) % m;
  pool.exclude_self_and_partner(partner);

  auto feature = [&](std::size_t j) -> std::span<const double> {
    const std::size_t b = (j % per_view) / hw;
    const int p = static_cast<int>(j % hw);
    return j < per_view ? weak_proj[b].pixel(p) : strong[b].projected.pixel(p);
  };
  auto dfeature = [&](std::size_t j) -> std::span<double> {
    const std::size_t b = (j % per_view) / hw;
    const int p = static_cast<int>(j % hw);
    return j < per_view ? dweak[b].pixel(p) : dstrong[b].pixel(p);
  };

  Rng rng(inputs.sampling_seed);
  std::vector<std::vector<std::size_t>> sampled;
  std::vector<std::size_t> anchors;
  ContrastiveTerm term;
  term.temperature = config.temperature;
  ContrastiveGrad g;
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    TopKDraw draw;
    try {
      const SamplingDensity density = build_density(config.strategy, i, pool);
      draw = gumbel_topk(density, static_cast<std::size_t>(config.num_negatives), rng);
    } catch (const EmptyDensity&) {
      ++diag.empty_densities;
      continue;
    }
    if (draw.shortfall) ++diag.shortfalls;
    term.anchor = feature(i);
    term.positive = feature(partner[i]);
    term.negatives.clear();
    for (std::size_t j : draw.indices) term.negatives.push_back(feature(j));
    sum += pixel_contrastive_loss_and_grad(term, g);

    auto add = [](std::span<double> dst, const Vector& src) {
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    };
    add(dfeature(i), g.anchor);
    add(dfeature(partner[i]), g.positive);
    for (std::size_t n = 0; n < draw.indices.size(); ++n) {
      add(dfeature(draw.indices[n]), g.negatives[n]);
    }
    anchors.push_back(i);
    sampled.push_back(std::move(draw.indices));
  }
  diag.anchors += anchors.size();
  if (anchors.empty()) return result;

  const double inv = 1.0 / static_cast<double>(anchors.size());
  for (auto& d : dweak) scale(d, inv);
  for (auto& d : dstrong) scale(d, inv);
  result.value = sum * inv;
  result.fnr = false_negative_rate(sampled, pool, anchors);
  return result;
}

FeatureLossResult image_contrast(const TrainConfig& config,
                                 const std::vector<BranchOutput>& strong,
                                 const std::vector<FeatureMap>& weak_proj,
                                 std::vector<FeatureMap>& dweak,
                                 std::vector<FeatureMap>& dstrong) {
  FeatureLossResult result;
  const std::size_t batch = strong.size();
  if (batch < 2) return result;
  const int dim = weak_proj[0].depth;
  const int hw = weak_proj[0].pixels();

  // pooled[view][b]
  std::vector<Vector> pooled[2];
  for (int view = 0; view < 2; ++view) {
    for (std::size_t b = 0; b < batch; ++b) {
      const FeatureMap& f = view == 0 ? weak_proj[b] : strong[b].projected;
      Vector mean(dim, 0.0);
      for (int p = 0; p < hw; ++p) {
        auto px = f.pixel(p);
        for (int k = 0; k < dim; ++k) mean[k] += px[k];
      }
      for (double& v : mean) v /= hw;
      pooled[view].push_back(std::move(mean));
    }
  }
  std::vector<Vector> dpooled[2];
  for (int view = 0; view < 2; ++view) dpooled[view].assign(batch, Vector(dim, 0.0));

  ContrastiveTerm term;
  term.temperature = config.temperature;
  ContrastiveGrad g;
  double sum = 0.0;
  std::vector<std::pair<int, std::size_t>> neg_ids;
  for (int view = 0; view < 2; ++view) {
    for (std::size_t b = 0; b < batch; ++b) {
      term.anchor = pooled[view][b];
      term.positive = pooled[1 - view][b];
      term.negatives.clear();
      neg_ids.clear();
      for (int v2 = 0; v2 < 2; ++v2) {
        for (std::size_t o = 0; o < batch; ++o) {
          if (o == b) continue;
          term.negatives.push_back(pooled[v2][o]);
          neg_ids.emplace_back(v2, o);
        }
      }
      sum += pixel_contrastive_loss_and_grad(term, g);
      for (int k = 0; k < dim; ++k) {
        dpooled[view][b][k] += g.anchor[k];
        dpooled[1 - view][b][k] += g.positive[k];
      }
      for (std::size_t n = 0; n < neg_ids.size(); ++n) {
        auto& dst = dpooled[neg_ids[n].first][neg_ids[n].second];
        for (int k = 0; k < dim; ++k) dst[k] += g.negatives[n][k];
      }
    }
  }
  const double count = 2.0 * static_cast<double>(batch);
  for (int view = 0; view < 2; ++view) {
    for (std::size_t b = 0; b < batch; ++b) {
      FeatureMap& d = view == 0 ? dweak[b] : dstrong[b];
      for (int p = 0; p < hw; ++p) {
        auto px = d.pixel(p);
        for (int k = 0; k < dim; ++k) px[k] += dpooled[view][b][k] / (count * hw);
      }
    }
  }
  result.value = sum / count;
  return result;
}

FeatureLossResult pixel_consist(const std::vector<BranchOutput>& strong,
                                const std::vector<FeatureMap>& weak_proj,
                                std::vector<FeatureMap>& dstrong) {
  FeatureLossResult result;
  const std::size_t batch = strong.size();
  const int hw = weak_proj[0].pixels();
  const double count = static_cast<double>(batch) * hw;
  double sum = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (int p = 0; p < hw; ++p) {
      const auto zw = weak_proj[b].pixel(p);
      const auto zs = strong[b].projected.pixel(p);
      sum += pixel_feature_consistency(zw, zs);
      const Vector g = pixel_feature_consistency_grad(zw, zs);
      auto d = dstrong[b].pixel(p);
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += g[k] / count;
    }
  }
  result.value = sum / count;
  return result;
}

std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

ModelConfig model_config(const TrainConfig& config, int num_classes) {
  ModelConfig m;
  m.stage_channels = config.stage_channels;
  m.num_classes = num_classes;
  m.feature_stage = config.feature_stage;
  m.projection_dim = config.projection_dim;
  m.shared_projection = config.shared_projection;
  m.seed = config.seed;
  return m;
}

StepInputs prepare_step_inputs(std::span<const Sample> labeled_batch,
                               std::span<const Sample> unlabeled_batch,
                               std::uint64_t labeled_seed,
                               std::uint64_t unlabeled_seed,
                               const std::array<double, 3>& fill_color,
                               bool build_unlabeled) {
  StepInputs inputs;
  inputs.labeled.reserve(labeled_batch.size());
  for (std::size_t i = 0; i < labeled_batch.size(); ++i) {
    inputs.labeled.push_back(augment_weak(labeled_batch[i], mix_seed(labeled_seed, i)));
  }
  if (build_unlabeled) {
    AugmentConfig aug;
    aug.fill_color = fill_color;
    inputs.unlabeled.reserve(unlabeled_batch.size());
    for (std::size_t i = 0; i < unlabeled_batch.size(); ++i) {
      inputs.unlabeled.push_back(
          augment_pair(unlabeled_batch[i], mix_seed(unlabeled_seed, i), aug));
    }
  }
  inputs.sampling_seed = mix_seed(unlabeled_seed, 0x5A4D);
  return inputs;
}

FrozenWeak freeze_weak_branch(const ToyNet& net, const StepInputs& inputs,
                              const TrainConfig& config) {
  FrozenWeak frozen;
  frozen.caches.resize(inputs.unlabeled.size());
  for (std::size_t b = 0; b < inputs.unlabeled.size(); ++b) {
    const BranchOutput out =
        forward(net, inputs.unlabeled[b].weak, Branch::kWeak, &frozen.caches[b]);
    frozen.targets.push_back(sharpen_map(out.logits, config.sharpen_temperature));
  }
  return frozen;
}

Objective evaluate_objective(const ToyNet& net, const StepInputs& inputs,
                             const FrozenWeak& frozen, const TrainConfig& config,
                             bool unlabeled_active, std::vector<double>* grad) {
  Objective obj;
  if (grad && grad->size() != net.parameter_count()) {
    grad->assign(net.parameter_count(), 0.0);
  }
  const int classes = net.config().num_classes;

  // Labeled stream: mean CE over non-ignored pixels.
  double ce_sum = 0.0;
  std::size_t ce_count = 0;
  std::vector<ForwardCache> lab_caches(inputs.labeled.size());
  std::vector<BranchOutput> lab_out;
  lab_out.reserve(inputs.labeled.size());
  for (std::size_t i = 0; i < inputs.labeled.size(); ++i) {
    const Sample& s = inputs.labeled[i];
    lab_out.push_back(forward(net, s.image, Branch::kLabeled,
                              grad ? &lab_caches[i] : nullptr));
    for (int p = 0; p < s.mask.pixels(); ++p) {
      const int label = s.mask.labels[p];
      if (label == kIgnoreLabel) continue;
      ce_sum += supervised_ce(lab_out[i].logits.pixel(p), label);
      ++ce_count;
    }
  }
  const double sup = ce_count ? ce_sum / static_cast<double>(ce_count) : 0.0;
  if (grad && ce_count) {
    const double inv = 1.0 / static_cast<double>(ce_count);
    for (std::size_t i = 0; i < inputs.labeled.size(); ++i) {
      const Sample& s = inputs.labeled[i];
      PixelMap dlogits(s.mask.height, s.mask.width, classes);
      for (int p = 0; p < s.mask.pixels(); ++p) {
        const int label = s.mask.labels[p];
        if (label == kIgnoreLabel) continue;
        const Vector g = supervised_ce_grad(lab_out[i].logits.pixel(p), label);
        auto d = dlogits.pixel(p);
        for (int c = 0; c < classes; ++c) d[c] = g[c] * inv;
      }
      backward(net, lab_caches[i], &dlogits, nullptr, *grad);
    }
  }

  double feature_value = 0.0;
  double output_value = 0.0;
  obj.diagnostics.unlabeled_active = unlabeled_active && !inputs.unlabeled.empty();
  if (obj.diagnostics.unlabeled_active) {
    const std::size_t batch = inputs.unlabeled.size();
    if (frozen.caches.size() != batch) {
      throw ContractViolation("evaluate_objective: frozen weak branch does not match inputs");
    }
    std::vector<ForwardCache> caches(batch);
    std::vector<BranchOutput> strong;
    strong.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      strong.push_back(forward(net, inputs.unlabeled[b].strong, Branch::kStrong,
                               grad ? &caches[b] : nullptr));
    }
    const int fs = net.config().feature_stage;
    std::vector<FeatureMap> weak_proj;
    weak_proj.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      weak_proj.push_back(project(net, frozen.caches[b].stage_outputs[fs - 1], Branch::kWeak));
    }

    // Label space.
    std::vector<PixelMap> dlogits;
    const int hw_out = strong[0].logits.pixels();
    const double out_count = static_cast<double>(batch) * hw_out;
    const double out_weight = config.lambda_consistency / out_count;
    for (std::size_t b = 0; b < batch; ++b) {
      const BranchOutput& s = strong[b];
      PixelMap d(s.logits.height, s.logits.width, classes);
      for (int p = 0; p < s.logits.pixels(); ++p) {
        const auto target = frozen.targets[b].pixel(p);
        if (config.output_loss == OutputLoss::kL2) {
          output_value += consistency_loss(target, s.probs.pixel(p));
          if (grad) {
            const auto g = consistency_grad(target, s.probs.pixel(p));
            softmax_backward(s.probs.pixel(p), g.strong, out_weight, d.pixel(p));
          }
        } else {
          output_value += output_ce_consistency(target, s.logits.pixel(p));
          if (grad) {
            const Vector g = output_ce_consistency_grad(target, s.logits.pixel(p));
            auto dp = d.pixel(p);
            for (int c = 0; c < classes; ++c) dp[c] += out_weight * g[c];
          }
        }
      }
      dlogits.push_back(std::move(d));
    }
    output_value /= out_count;

    // Feature space.
    const auto& pshape = weak_proj[0];
    std::vector<FeatureMap> dweak(batch, FeatureMap(pshape.height, pshape.width, pshape.depth));
    std::vector<FeatureMap> dstrong = dweak;
    FeatureLossResult fl;
    const FeatureLoss feature_loss =
        config.lambda_contrast > 0.0 ? config.feature_loss : FeatureLoss::kNone;
    switch (feature_loss) {
      case FeatureLoss::kNone:
        break;
      case FeatureLoss::kPixelContrast:
        if (config.num_negatives > 0) {
          fl = pixel_contrast(config, inputs, frozen, strong, weak_proj, dweak, dstrong,
                              obj.diagnostics);
        }
        break;
      case FeatureLoss::kImageContrast:
        fl = image_contrast(config, strong, weak_proj, dweak, dstrong);
        break;
      case FeatureLoss::kPixelConsist:
        fl = pixel_consist(strong, weak_proj, dstrong);
        break;
    }
    feature_value = fl.value;
    obj.fnr = fl.fnr;

    if (grad) {
      for (std::size_t b = 0; b < batch; ++b) {
        scale(dweak[b], config.lambda_contrast);
        scale(dstrong[b], config.lambda_contrast);
        backward(net, caches[b], &dlogits[b], &dstrong[b], *grad);
        backward(net, frozen.caches[b], nullptr, &dweak[b], *grad);
      }
    }
  }
  obj.losses = combine_losses(sup, feature_value, output_value,
                              config.lambda_contrast, config.lambda_consistency);
  if (!std::isfinite(obj.losses.total)) {
    throw NumericalFailure("non-finite training loss");
  }
  return obj;
}

MetricsRow train_step(ToyNet& net, std::span<const Sample> labeled_batch,
                      std::span<const Sample> unlabeled_batch,
                      const TrainConfig& config, Rng& rng, int step,
                      const std::array<double, 3>& fill_color,
                      StepDiagnostics* diagnostics) {
  if (step < 0 || step >= config.total_steps) {
    throw InvalidParameter("train_step: step must lie in [0, total_steps)");
  }
  const std::uint64_t labeled_seed = rng();
  const std::uint64_t unlabeled_seed = rng();
  const bool active = step >= config.delay_steps &&
                      (config.lambda_contrast > 0.0 || config.lambda_consistency > 0.0);

  const StepInputs inputs = prepare_step_inputs(labeled_batch, unlabeled_batch,
                                                labeled_seed, unlabeled_seed,
                                                fill_color, active);
  FrozenWeak frozen;
  if (active) frozen = freeze_weak_branch(net, inputs, config);
  std::vector<double> grad(net.parameter_count(), 0.0);
  const Objective obj = evaluate_objective(net, inputs, frozen, config, active, &grad);

  const LrSchedule schedule{config.base_lr, config.total_steps, config.weight_decay};
  sgd_step(net, grad, step, schedule);

  if (diagnostics) *diagnostics = obj.diagnostics;
  MetricsRow row;
  row.step = step + 1;
  row.supervised_ce = obj.losses.supervised_ce;
  row.contrastive = obj.losses.contrastive;
  row.consistency = obj.losses.consistency;
  row.total = obj.losses.total;
  row.fnr = obj.fnr;
  row.lr = schedule.lr(step);
  return row;
}

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes),
      counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 1) throw InvalidParameter("ConfusionMatrix: need >= 1 class");
}

void ConfusionMatrix::add(std::span<const std::uint8_t> prediction,
                          std::span<const std::uint8_t> truth) {
  if (prediction.size() != truth.size()) {
    throw InvalidParameter("ConfusionMatrix::add: size mismatch");
  }
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (truth[k] == kIgnoreLabel) continue;
    if (truth[k] >= num_classes_ || prediction[k] >= num_classes_) {
      throw InvalidParameter("ConfusionMatrix::add: class index out of range");
    }
    ++counts_[static_cast<std::size_t>(truth[k]) * num_classes_ + prediction[k]];
  }
}

std::uint64_t ConfusionMatrix::count(int truth, int prediction) const {
  return counts_.at(static_cast<std::size_t>(truth) * num_classes_ + prediction);
}

std::vector<double> ConfusionMatrix::per_class_iou() const {
  std::vector<double> iou(num_classes_, kNaN);
  for (int c = 0; c < num_classes_; ++c) {
    const std::uint64_t tp = count(c, c);
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    for (int o = 0; o < num_classes_; ++o) {
      if (o == c) continue;
      fp += count(o, c);
      fn += count(c, o);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom > 0) iou[c] = static_cast<double>(tp) / static_cast<double>(denom);
  }
  return iou;
}

double ConfusionMatrix::mean_iou() const {
  double sum = 0.0;
  int n = 0;
  for (double v : per_class_iou()) {
    if (std::isnan(v)) continue;
    sum += v;
    ++n;
  }
  return n ? sum / n : kNaN;
}

LabelMap predict(const ToyNet& net, const Image& image) {
  const BranchOutput out = forward(net, image, Branch::kLabeled);
  LabelMap pred(image.height, image.width);
  for (int p = 0; p < out.logits.pixels(); ++p) {
    const auto l = out.logits.pixel(p);
    pred.labels[p] = static_cast<std::uint8_t>(
        std::max_element(l.begin(), l.end()) - l.begin());
  }
  return pred;
}

MiouResult evaluate_miou(const ToyNet& net, const Dataset& eval_set) {
  if (eval_set.samples.empty()) throw InvalidParameter("evaluate_miou: empty eval set");
  ConfusionMatrix cm(net.config().num_classes);
  for (const auto& s : eval_set.samples) {
    cm.add(predict(net, s.image).labels, s.mask.labels);
  }
  return MiouResult{cm.per_class_iou(), cm.mean_iou()};
}

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols{"step", "supervised_ce", "contrastive",
                                             "consistency", "total", "fnr",
                                             "eval_miou", "lr"};
  return cols;
}

void write_metrics_header(std::ostream& out) {
  const auto& cols = metrics_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
}

void write_metrics_row(std::ostream& out, const MetricsRow& row) {
  out << row.step << ',' << format_value(row.supervised_ce) << ','
      << format_value(row.contrastive) << ',' << format_value(row.consistency) << ','
      << format_value(row.total) << ',' << format_value(row.fnr) << ','
      << format_value(row.eval_miou) << ',' << format_value(row.lr) << '\n';
}

TrainingResult run_training(const TrainConfig& config, const Dataset& train,
                            const Dataset& eval, const RunOutputs& outputs) {
  config.validate();
  if (train.samples.empty()) throw InvalidParameter("run_training: empty training set");
  if (eval.samples.empty()) throw InvalidParameter("run_training: empty eval set");
  if (train.num_classes != eval.num_classes) {
    throw InvalidParameter("run_training: train/eval class counts differ");
  }

  namespace fs = std::filesystem;
  std::ofstream csv;
  const bool write = !outputs.directory.empty();
  if (write) {
    std::error_code ec;
    fs::create_directories(outputs.directory, ec);
    if (ec) throw IoError("cannot create output directory " + outputs.directory + ": " + ec.message());
    const std::string csv_path = (fs::path(outputs.directory) / "metrics.csv").string();
    csv.open(csv_path);
    if (!csv) throw IoError("cannot open " + csv_path + " for writing");
    std::ofstream cfg((fs::path(outputs.directory) / "config.txt").string());
    if (!cfg) throw IoError("cannot write config.txt in " + outputs.directory);
    cfg << config.to_text();
    write_metrics_header(csv);
  }

  ToyNet net(model_config(config, train.num_classes));
  const Split sp = split(train.size(), config.labeled_fraction, mix_seed(config.seed, 1));
  const auto fill = train.mean_color();
  const int interval = config.effective_eval_interval();

  TrainingResult result;
  MetricsRow initial;
  initial.step = 0;
  initial.eval_miou = evaluate_miou(net, eval).mean;
  result.rows.push_back(initial);
  if (write) write_metrics_row(csv, initial);

  Rng rng(mix_seed(config.seed, 2));
  std::vector<Sample> labeled_batch;
  std::vector<Sample> unlabeled_batch;
  double fnr_sum = 0.0;
  std::size_t fnr_n = 0;
  for (int step = 0; step < config.total_steps; ++step) {
    Rng batch_rng(mix_seed(config.seed, 3, static_cast<std::uint64_t>(step)));
    labeled_batch.clear();
    unlabeled_batch.clear();
    for (int i = 0; i < config.batch_labeled; ++i) {
      const auto k = uniform_int(batch_rng, 0, static_cast<int>(sp.labeled.size()) - 1);
      labeled_batch.push_back(train.samples[sp.labeled[k]]);
    }
    for (int i = 0; i < config.batch_unlabeled; ++i) {
      const auto k = uniform_int(batch_rng, 0, static_cast<int>(sp.unlabeled.size()) - 1);
      unlabeled_batch.push_back(train.samples[sp.unlabeled[k]]);
    }
    StepDiagnostics diag;
    MetricsRow row = train_step(net, labeled_batch, unlabeled_batch, config, rng, step,
                                fill, &diag);
    result.diagnostics.anchors += diag.anchors;
    result.diagnostics.empty_densities += diag.empty_densities;
    result.diagnostics.shortfalls += diag.shortfalls;
    if (!std::isnan(row.fnr)) {
      fnr_sum += row.fnr;
      ++fnr_n;
    }
    if (row.step % interval == 0 || row.step == config.total_steps) {
      row.eval_miou = evaluate_miou(net, eval).mean;
    }
    if (write) {
      write_metrics_row(csv, row);
      if (config.checkpoint_interval > 0 && row.step % config.checkpoint_interval == 0 &&
          row.step != config.total_steps) {
        save_checkpoint((fs::path(outputs.directory) /
                         ("checkpoint_" + std::to_string(row.step) + ".bin"))
                            .string(),
                        net, row.step);
      }
    }
    result.rows.push_back(row);
  }
  result.final_miou = result.rows.back().eval_miou;
  result.mean_fnr = fnr_n ? fnr_sum / static_cast<double>(fnr_n) : kNaN;
  if (write) {
    save_checkpoint((fs::path(outputs.directory) / "checkpoint.bin").string(), net,
                    config.total_steps);
    csv.flush();
    if (!csv) throw IoError("failed writing metrics.csv in " + outputs.directory);
  }
  return result;
}

std::vector<AblationCell> preset_grid(std::string_view axis, const TrainConfig& base) {
  std::vector<AblationCell> cells;
  auto cell = [&](std::string name, auto&& edit) {
    TrainConfig c = base;
    edit(c);
    cells.push_back({std::move(name), std::move(c)});
  };
  if (axis == "strategy") {
    for (StrategyKind k : kAllStrategies) {
      cell("strategy=" + std::string(to_string(k)), [&](TrainConfig& c) { c.strategy = k; });
    }
  } else if (axis == "negatives") {
    for (int n : {0, 50, 100, 200, 400, 800}) {
      cell("num_negatives=" + std::to_string(n), [&](TrainConfig& c) { c.num_negatives = n; });
    }
  } else if (axis == "coefficients") {
    for (double l2 : {0.0, 0.5, 0.7, 1.0, 1.2}) {
      for (double l1 : {0.0, 0.1, 0.3, 0.5, 0.7, 0.9}) {
        std::ostringstream name;
        name << "lambda1=" << l1 << ";lambda2=" << l2;
        cell(name.str(), [&](TrainConfig& c) {
          c.lambda_contrast = l1;
          c.lambda_consistency = l2;
        });
      }
    }
  } else if (axis == "feature-stage") {
    for (int s = 1; s <= static_cast<int>(base.stage_channels.size()); ++s) {
      cell("feature_stage=" + std::to_string(s), [&](TrainConfig& c) { c.feature_stage = s; });
    }
  } else if (axis == "loss-variants") {
    for (auto out : {OutputLoss::kCrossEntropy, OutputLoss::kL2}) {
      for (auto feat : {FeatureLoss::kNone, FeatureLoss::kImageContrast,
                        FeatureLoss::kPixelConsist, FeatureLoss::kPixelContrast}) {
        cell("output_loss=" + std::string(to_string(out)) +
                 ";feature_loss=" + std::string(to_string(feat)),
             [&](TrainConfig& c) {
               c.output_loss = out;
               c.feature_loss = feat;
             });
      }
    }
  } else if (axis == "delay") {
    // Same fractions of the schedule as 0/2k/4k/8k/12k out of 30k steps.
    for (int num : {0, 2, 4, 8, 12}) {
      const int delay = base.total_steps * num / 30;
      cell("delay_steps=" + std::to_string(delay), [&](TrainConfig& c) { c.delay_steps = delay; });
    }
  } else if (axis == "projection") {
    for (bool shared : {false, true}) {
      cell(std::string("shared_projection=") + (shared ? "1" : "0"),
           [&](TrainConfig& c) { c.shared_projection = shared; });
    }
  } else {
    throw InvalidParameter("unknown ablation axis '" + std::string(axis) +
                           "' (expected strategy|negatives|coefficients|feature-stage|"
                           "loss-variants|delay|projection)");
  }
  return cells;
}

std::vector<AblationCell> parse_grid(std::istream& in, const TrainConfig& base) {
  std::vector<AblationCell> cells;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream fields(line);
    std::string name;
    if (!(fields >> name)) continue;
    AblationCell cell{name, base};
    std::string kv;
    while (fields >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ParseError("expected key=value, got '" + kv + "'", line_no);
      try {
        cell.config.set(kv.substr(0, eq), kv.substr(eq + 1));
      } catch (const InvalidParameter& e) {
        throw ParseError(e.what(), line_no);
      }
    }
    cells.push_back(std::move(cell));
  }
  if (cells.empty()) throw InvalidParameter("ablation grid is empty");
  return cells;
}

std::vector<AblationResult> run_ablation(const std::vector<AblationCell>& cells,
                                         const Dataset& train, const Dataset& eval,
                                         int jobs) {
  if (cells.empty()) throw InvalidParameter("ablation grid is empty");
  std::vector<AblationResult> results(cells.size());
  std::mutex mu;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= cells.size()) return;
        i = next++;
      }
      AblationResult& r = results[i];
      r.name = cells[i].name;
      try {
        const TrainingResult t = run_training(cells[i].config, train, eval);
        r.final_miou = t.final_miou;
        r.mean_fnr = t.mean_fnr;
      } catch (const std::exception& e) {
        r.error = e.what();
      }
    }
  };
  const int n = std::clamp(jobs, 1, static_cast<int>(cells.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return results;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationResult>& results) {
  out << "setting,final_miou,mean_fnr,status\n";
  for (const auto& r : results) {
    std::string status = r.error.empty() ? "ok" : r.error;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    out << r.name << ',' << format_value(r.final_miou) << ',' << format_value(r.mean_fnr)
        << ',' << status << '\n';
  }
}

}  // namespace pixcon
