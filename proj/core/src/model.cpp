#include "pixcon/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "pixcon/core_math.hpp"
#include "pixcon/errors.hpp"
#include "pixcon/rng.hpp"

namespace pixcon {
namespace {

constexpr int kKernel = 3;
constexpr int kStride = 2;
constexpr int kPad = 1;
constexpr std::string_view kCheckpointMagic = "pixcon-checkpoint";
constexpr int kCheckpointVersion = 1;

std::string stage_name(int s, const char* part) {
  return "stage" + std::to_string(s + 1) + "." + part;
}

int conv_out_size(int in) { return (in + 2 * kPad - kKernel) / kStride + 1; }

void check_finite(const PixelMap& m, const std::string& layer) {
  for (double v : m.values) {
    if (!std::isfinite(v)) {
      throw NumericalFailure("non-finite activation in layer '" + layer + "'");
    }
  }
}

// 3×3 stride-2 convolution + ReLU. Weights are [out][ky][kx][in].
PixelMap conv_relu_forward(const PixelMap& in, const double* w, const double* b,
                           int out_c) {
  const int oh = conv_out_size(in.height);
  const int ow = conv_out_size(in.width);
  const int in_c = in.depth;
  PixelMap out(oh, ow, out_c);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      double* dst = out.pixel(oy, ox).data();
      for (int oc = 0; oc < out_c; ++oc) dst[oc] = b[oc];
      for (int ky = 0; ky < kKernel; ++ky) {
        const int iy = oy * kStride - kPad + ky;
        if (iy < 0 || iy >= in.height) continue;
        for (int kx = 0; kx < kKernel; ++kx) {
          const int ix = ox * kStride - kPad + kx;
          if (ix < 0 || ix >= in.width) continue;
          const double* src = in.pixel(iy, ix).data();
          for (int oc = 0; oc < out_c; ++oc) {
            const double* wk = w + ((oc * kKernel + ky) * kKernel + kx) * in_c;
            double acc = 0.0;
            for (int ic = 0; ic < in_c; ++ic) acc += wk[ic] * src[ic];
            dst[oc] += acc;
          }
        }
      }
      for (int oc = 0; oc < out_c; ++oc) dst[oc] = std::max(dst[oc], 0.0);
    }
  }
  return out;
}

// `dout` is ∂L/∂(post-ReLU output); `out` the forward output for the mask.
void conv_relu_backward(const PixelMap& in, const PixelMap& out, PixelMap dout,
                        const double* w, double* dw, double* db, PixelMap* din) {
  const int in_c = in.depth;
  const int out_c = out.depth;
  for (std::size_t k = 0; k < dout.values.size(); ++k) {
    if (out.values[k] <= 0.0) dout.values[k] = 0.0;
  }
  for (int oy = 0; oy < out.height; ++oy) {
    for (int ox = 0; ox < out.width; ++ox) {
      const double* g = dout.pixel(oy, ox).data();
      for (int oc = 0; oc < out_c; ++oc) db[oc] += g[oc];
      for (int ky = 0; ky < kKernel; ++ky) {
        const int iy = oy * kStride - kPad + ky;
        if (iy < 0 || iy >= in.height) continue;
        for (int kx = 0; kx < kKernel; ++kx) {
          const int ix = ox * kStride - kPad + kx;
          if (ix < 0 || ix >= in.width) continue;
          const double* src = in.pixel(iy, ix).data();
          double* dsrc = din ? din->pixel(iy, ix).data() : nullptr;
          for (int oc = 0; oc < out_c; ++oc) {
            const double go = g[oc];
            if (go == 0.0) continue;
            const std::size_t base =
                static_cast<std::size_t>((oc * kKernel + ky) * kKernel + kx) * in_c;
            double* dwk = dw + base;
            for (int ic = 0; ic < in_c; ++ic) dwk[ic] += go * src[ic];
            if (dsrc) {
              const double* wk = w + base;
              for (int ic = 0; ic < in_c; ++ic) dsrc[ic] += go * wk[ic];
            }
          }
        }
      }
    }
  }
}

// out[p] = W·in[p] (+ b), W is [out_dim][in_dim].
PixelMap pointwise_linear(const PixelMap& in, const double* w, const double* b,
                          int out_dim) {
  PixelMap out(in.height, in.width, out_dim);
  const int in_dim = in.depth;
  for (int p = 0; p < in.pixels(); ++p) {
    auto src = in.pixel(p);
    auto dst = out.pixel(p);
    for (int o = 0; o < out_dim; ++o) {
      const double* wo = w + static_cast<std::size_t>(o) * in_dim;
      double acc = b ? b[o] : 0.0;
      for (int i = 0; i < in_dim; ++i) acc += wo[i] * src[i];
      dst[o] = acc;
    }
  }
  return out;
}

void pointwise_linear_backward(const PixelMap& in, const PixelMap& dout,
                               const double* w, double* dw, double* db,
                               PixelMap* din) {
  const int in_dim = in.depth;
  const int out_dim = dout.depth;
  for (int p = 0; p < in.pixels(); ++p) {
    auto src = in.pixel(p);
    auto g = dout.pixel(p);
    double* dsrc = din ? din->pixel(p).data() : nullptr;
    for (int o = 0; o < out_dim; ++o) {
      const double go = g[o];
      if (go == 0.0) continue;
      if (db) db[o] += go;
      double* dwo = dw + static_cast<std::size_t>(o) * in_dim;
      const double* wo = w + static_cast<std::size_t>(o) * in_dim;
      for (int i = 0; i < in_dim; ++i) dwo[i] += go * src[i];
      if (dsrc) {
        for (int i = 0; i < in_dim; ++i) dsrc[i] += go * wo[i];
      }
    }
  }
}

void add_into(PixelMap& dst, const PixelMap& src) {
  for (std::size_t k = 0; k < dst.values.size(); ++k) dst.values[k] += src.values[k];
}

}  // namespace

void ModelConfig::validate() const {
  if (stage_channels.empty()) throw InvalidParameter("model: need at least one stage");
  for (int c : stage_channels) {
    if (c < 1) throw InvalidParameter("model: stage widths must be >= 1");
  }
  if (input_channels < 1) throw InvalidParameter("model: input_channels must be >= 1");
  if (num_classes < 2) throw InvalidParameter("model: num_classes must be >= 2");
  if (feature_stage < 1 || feature_stage > static_cast<int>(stage_channels.size())) {
    throw InvalidParameter("model: feature_stage must be in [1, stages]");
  }
  if (projection_dim < 1) throw InvalidParameter("model: projection_dim must be >= 1");
}

ToyNet::ToyNet(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t size) {
    slices_.push_back({std::move(name), offset, size});
    offset += size;
  };
  int in_c = config_.input_channels;
  for (int s = 0; s < stage_count(); ++s) {
    const int out_c = config_.stage_channels[s];
    add(stage_name(s, "weight"),
        static_cast<std::size_t>(out_c) * kKernel * kKernel * in_c);
    add(stage_name(s, "bias"), out_c);
    in_c = out_c;
  }
  add("decoder.weight", static_cast<std::size_t>(config_.num_classes) * in_c);
  add("decoder.bias", config_.num_classes);
  const std::size_t proj =
      static_cast<std::size_t>(config_.projection_dim) * feature_dim();
  if (config_.shared_projection) {
    add("projection_shared", proj);
  } else {
    add("projection_weak", proj);
    add("projection_strong", proj);
  }
  params_.assign(offset, 0.0);
  initialize(config_.seed);
}

const ParamSlice& ToyNet::slice(std::string_view name) const {
  for (const auto& s : slices_) {
    if (s.name == name) return s;
  }
  throw InvalidParameter("no parameter slice named '" + std::string(name) + "'");
}

std::span<double> ToyNet::slice_values(std::string_view name) {
  const auto& s = slice(name);
  return std::span<double>(params_).subspan(s.offset, s.size);
}

std::span<const double> ToyNet::slice_values(std::string_view name) const {
  const auto& s = slice(name);
  return std::span<const double>(params_).subspan(s.offset, s.size);
}

std::string ToyNet::projection_slice_name(Branch branch) const {
  if (config_.shared_projection) return "projection_shared";
  return branch == Branch::kWeak ? "projection_weak" : "projection_strong";
}

int ToyNet::feature_dim() const {
  return config_.stage_channels[config_.feature_stage - 1];
}

void ToyNet::initialize(std::uint64_t seed) {
  Rng rng(seed);
  auto fill_uniform = [&](std::string_view name, double bound) {
    for (double& v : slice_values(name)) v = uniform(rng, -bound, bound);
  };
  int in_c = config_.input_channels;
  for (int s = 0; s < stage_count(); ++s) {
    const double fan_in = kKernel * kKernel * in_c;
    fill_uniform(stage_name(s, "weight"), std::sqrt(6.0 / fan_in));
    for (double& v : slice_values(stage_name(s, "bias"))) v = 0.0;
    in_c = config_.stage_channels[s];
  }
  fill_uniform("decoder.weight", std::sqrt(3.0 / in_c));
  for (double& v : slice_values("decoder.bias")) v = 0.0;
  const double proj_bound = std::sqrt(3.0 / feature_dim());
  if (config_.shared_projection) {
    fill_uniform("projection_shared", proj_bound);
  } else {
    fill_uniform("projection_weak", proj_bound);
    fill_uniform("projection_strong", proj_bound);
  }
}

FeatureMap project(const ToyNet& net, const FeatureMap& features, Branch branch) {
  if (features.depth != net.feature_dim()) {
    throw InvalidParameter("project: feature depth " + std::to_string(features.depth) +
                           " != " + std::to_string(net.feature_dim()));
  }
  if (branch == Branch::kLabeled) {
    throw InvalidParameter("project: the labeled stream has no projection head");
  }
  const auto w = net.slice_values(net.projection_slice_name(branch));
  return pointwise_linear(features, w.data(), nullptr, net.config().projection_dim);
}

BranchOutput forward(const ToyNet& net, const Image& image, Branch branch,
                     ForwardCache* cache) {
  const auto& cfg = net.config();
  if (image.depth != cfg.input_channels) {
    throw InvalidParameter("forward: image has " + std::to_string(image.depth) +
                           " channels, expected " + std::to_string(cfg.input_channels));
  }
  std::vector<PixelMap> stages;
  stages.reserve(net.stage_count());
  const PixelMap* x = &image;
  for (int s = 0; s < net.stage_count(); ++s) {
    const auto w = net.slice_values(stage_name(s, "weight"));
    const auto b = net.slice_values(stage_name(s, "bias"));
    stages.push_back(conv_relu_forward(*x, w.data(), b.data(), cfg.stage_channels[s]));
    check_finite(stages.back(), stage_name(s, "conv"));
    x = &stages.back();
  }
  const auto dw = net.slice_values("decoder.weight");
  const auto db = net.slice_values("decoder.bias");
  PixelMap low = pointwise_linear(stages.back(), dw.data(), db.data(), cfg.num_classes);
  check_finite(low, "decoder");

  BranchOutput out;
  out.logits = resize_bilinear(low, image.height, image.width);
  out.probs = PixelMap(image.height, image.width, cfg.num_classes);
  for (int p = 0; p < out.logits.pixels(); ++p) {
    const Vector sm = softmax(out.logits.pixel(p));
    std::copy(sm.begin(), sm.end(), out.probs.pixel(p).begin());
  }
  out.features = stages[cfg.feature_stage - 1];
  if (branch != Branch::kLabeled) {
    out.projected = project(net, out.features, branch);
    check_finite(out.projected, net.projection_slice_name(branch));
  }
  if (cache) {
    cache->valid = true;
    cache->branch = branch;
    cache->input = image;
    cache->stage_outputs = std::move(stages);
    cache->low_logits = std::move(low);
  }
  return out;
}

void backward(const ToyNet& net, const ForwardCache& cache, const PixelMap* dlogits,
              const FeatureMap* dprojected, std::span<double> grad) {
  if (!cache.valid) throw ContractViolation("backward called without a forward cache");
  if (grad.size() != net.parameter_count()) {
    throw InvalidParameter("backward: gradient buffer has wrong length");
  }
  const auto& cfg = net.config();
  const auto params = net.parameters();
  const PixelMap& features = cache.stage_outputs[cfg.feature_stage - 1];

  PixelMap dfeatures(features.height, features.width, features.depth);
  if (dprojected && cache.branch != Branch::kLabeled) {
    if (dprojected->height != features.height || dprojected->width != features.width ||
        dprojected->depth != cfg.projection_dim) {
      throw InvalidParameter("backward: projected-gradient shape mismatch");
    }
    const auto& s = net.slice(net.projection_slice_name(cache.branch));
    // Weak branch: stop-gradient before the projection, so only the head
    // parameters are updated.
    PixelMap* din = cache.branch == Branch::kWeak ? nullptr : &dfeatures;
    pointwise_linear_backward(features, *dprojected, params.data() + s.offset,
                              grad.data() + s.offset, nullptr, din);
  }
  if (cache.branch == Branch::kWeak) return;

  const int last = net.stage_count() - 1;
  PixelMap dstage(cache.stage_outputs[last].height, cache.stage_outputs[last].width,
                  cache.stage_outputs[last].depth);
  if (dlogits) {
    if (dlogits->height != cache.input.height || dlogits->width != cache.input.width ||
        dlogits->depth != cfg.num_classes) {
      throw InvalidParameter("backward: logit-gradient shape mismatch");
    }
    const PixelMap dlow = resize_bilinear_backward(*dlogits, cache.low_logits.height,
                                                   cache.low_logits.width);
    const auto& w = net.slice("decoder.weight");
    const auto& b = net.slice("decoder.bias");
    pointwise_linear_backward(cache.stage_outputs[last], dlow, params.data() + w.offset,
                              grad.data() + w.offset, grad.data() + b.offset, &dstage);
  }
  for (int s = last; s >= 0; --s) {
    if (s == cfg.feature_stage - 1) add_into(dstage, dfeatures);
    const PixelMap& in = s == 0 ? cache.input : cache.stage_outputs[s - 1];
    PixelMap din;
    if (s > 0) din = PixelMap(in.height, in.width, in.depth);
    const auto& w = net.slice(stage_name(s, "weight"));
    const auto& b = net.slice(stage_name(s, "bias"));
    conv_relu_backward(in, cache.stage_outputs[s], std::move(dstage),
                       params.data() + w.offset, grad.data() + w.offset,
                       grad.data() + b.offset, s > 0 ? &din : nullptr);
    dstage = std::move(din);
  }
}

std::vector<double> backward(const ToyNet& net, const ForwardCache& cache,
                             const PixelMap* dlogits, const FeatureMap* dprojected) {
  std::vector<double> grad(net.parameter_count(), 0.0);
  backward(net, cache, dlogits, dprojected, grad);
  return grad;
}

double LrSchedule::lr(int step) const {
  if (total_steps <= 0) return 0.0;
  return base_lr * (1.0 - static_cast<double>(step) / total_steps);
}

void sgd_step(ToyNet& net, std::span<const double> grad, int step,
              const LrSchedule& schedule) {
  if (grad.size() != net.parameter_count()) {
    throw InvalidParameter("sgd_step: gradient has wrong length");
  }
  if (step < 0 || step >= schedule.total_steps) {
    throw InvalidParameter("sgd_step: step must lie in [0, total_steps)");
  }
  const double lr = schedule.lr(step);
  auto params = net.parameters();
  if (schedule.weight_decay == 0.0) {
    for (std::size_t k = 0; k < params.size(); ++k) params[k] -= lr * grad[k];
  } else {
    for (std::size_t k = 0; k < params.size(); ++k) {
      params[k] -= lr * (grad[k] + schedule.weight_decay * params[k]);
    }
  }
}

void write_checkpoint(std::ostream& out, const ToyNet& net, int step) {
  const auto& c = net.config();
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "stages";
  for (int w : c.stage_channels) out << ' ' << w;
  out << '\n';
  out << "input_channels " << c.input_channels << '\n'
      << "classes " << c.num_classes << '\n'
      << "feature_stage " << c.feature_stage << '\n'
      << "projection_dim " << c.projection_dim << '\n'
      << "shared_projection " << (c.shared_projection ? 1 : 0) << '\n'
      << "seed " << c.seed << '\n'
      << "step " << step << '\n'
      << "parameters " << net.parameter_count() << '\n'
      << "end\n";
  for (double v : net.parameters()) detail::write_f32_le(out, v);
}

void save_checkpoint(const std::string& path, const ToyNet& net, int step) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  write_checkpoint(out, net, step);
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

LoadedCheckpoint read_checkpoint(std::istream& in) {
  ModelConfig cfg;
  int step = 0;
  std::size_t count = 0;
  std::string line;
  std::size_t line_no = 0;
  bool have_magic = false;
  bool ended = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (!have_magic) {
      int version = 0;
      if (key != kCheckpointMagic || !(fields >> version)) {
        throw ParseError("not a pixcon checkpoint", line_no);
      }
      if (version != kCheckpointVersion) {
        throw ParseError("unsupported checkpoint version " + std::to_string(version),
                         line_no);
      }
      have_magic = true;
      continue;
    }
    if (key == "end") {
      ended = true;
      break;
    }
    bool ok = true;
    if (key == "stages") {
      cfg.stage_channels.clear();
      int w;
      while (fields >> w) cfg.stage_channels.push_back(w);
    } else if (key == "input_channels") {
      ok = static_cast<bool>(fields >> cfg.input_channels);
    } else if (key == "classes") {
      ok = static_cast<bool>(fields >> cfg.num_classes);
    } else if (key == "feature_stage") {
      ok = static_cast<bool>(fields >> cfg.feature_stage);
    } else if (key == "projection_dim") {
      ok = static_cast<bool>(fields >> cfg.projection_dim);
    } else if (key == "shared_projection") {
      int flag = 0;
      ok = static_cast<bool>(fields >> flag);
      cfg.shared_projection = flag != 0;
    } else if (key == "seed") {
      ok = static_cast<bool>(fields >> cfg.seed);
    } else if (key == "step") {
      ok = static_cast<bool>(fields >> step);
    } else if (key == "parameters") {
      ok = static_cast<bool>(fields >> count);
    } else {
      throw ParseError("unknown checkpoint header key '" + key + "'", line_no);
    }
    if (!ok) throw ParseError("malformed value for '" + key + "'", line_no);
  }
  if (!ended) throw ParseError("checkpoint header not terminated by 'end'", line_no);

  LoadedCheckpoint loaded{ToyNet(cfg), step};
  if (loaded.net.parameter_count() != count) {
    throw ParseError("parameter count does not match architecture", line_no);
  }
  for (double& v : loaded.net.parameters()) {
    if (!detail::read_f32_le(in, v)) {
      throw IoError("checkpoint payload truncated");
    }
  }
  return loaded;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  try {
    return read_checkpoint(in);
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

}  // namespace pixcon
