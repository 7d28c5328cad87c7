#include "pixcon/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "binary_io.hpp"
#include "pixcon/errors.hpp"
#include "pixcon/rng.hpp"

namespace pixcon {
namespace {

constexpr std::string_view kDatasetMagic = "pixcon-dataset";
constexpr int kDatasetVersion = 1;
constexpr double kPi = 3.14159265358979323846;

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s);
  const double q = v * (1 - s * f);
  const double t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Fixed palette: class c ≥ 1 gets an evenly spaced hue.
std::array<double, 3> class_color(int c, int num_classes) {
  const double hue = static_cast<double>(c - 1) / static_cast<double>(num_classes - 1);
  return hsv_to_rgb(hue, 0.75, 0.85);
}

enum class ShapeKind { kRect, kDisk, kTriangle };

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

}  // namespace

Sample generate_sample(std::uint64_t seed, const GeneratorConfig& config) {
  if (config.num_classes < 2) throw InvalidParameter("generate_sample: C must be >= 2");
  if (config.height < 1 || config.width < 1) {
    throw InvalidParameter("generate_sample: image must be non-empty");
  }
  Rng rng(seed);
  const int h = config.height;
  const int w = config.width;
  Sample s{Image(h, w, 3), LabelMap(h, w, 0)};

  // Background: low-saturation color with a smooth gradient.
  const auto bg = hsv_to_rgb(uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 0.25),
                             uniform(rng, 0.35, 0.65));
  const double gy = uniform(rng, -0.15, 0.15);
  const double gx = uniform(rng, -0.15, 0.15);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double ramp = gy * (y / double(h) - 0.5) + gx * (x / double(w) - 0.5);
      for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = bg[c] + ramp;
    }
  }

  const int shapes = config.shapes_per_image > 0
                         ? uniform_int(rng, 1, config.shapes_per_image)
                         : 0;
  const double dim = std::min(h, w);
  for (int k = 0; k < shapes; ++k) {
    const int cls = uniform_int(rng, 1, config.num_classes - 1);
    // Shape type correlates with class but is not determined by it.
    const int preferred = (cls - 1) % 3;
    const int kind_index = bernoulli(rng, 0.7) ? preferred : uniform_int(rng, 0, 2);
    const auto kind = static_cast<ShapeKind>(kind_index);
    auto color = class_color(cls, config.num_classes);
    for (double& v : color) v = clamp01(v + uniform(rng, -0.08, 0.08));

    const double size = uniform(rng, 0.2, 0.45) * dim;
    const double cy = uniform(rng, 0.0, h);
    const double cx = uniform(rng, 0.0, w);
    const double aspect = uniform(rng, 0.6, 1.6);
    const double half_h = size * 0.5 * aspect;
    const double half_w = size * 0.5 / aspect;
    const double rot = uniform(rng, 0.0, 2 * kPi);
    double tri[6];
    for (int v = 0; v < 3; ++v) {
      const double a = rot + v * 2 * kPi / 3;
      tri[2 * v] = cx + size * 0.6 * std::cos(a);
      tri[2 * v + 1] = cy + size * 0.6 * std::sin(a);
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double py = y + 0.5;
        const double px = x + 0.5;
        bool inside = false;
        switch (kind) {
          case ShapeKind::kRect:
            inside = std::abs(py - cy) <= half_h && std::abs(px - cx) <= half_w;
            break;
          case ShapeKind::kDisk: {
            const double dy = (py - cy) / half_h;
            const double dx = (px - cx) / half_w;
            inside = dy * dy + dx * dx <= 1.0;
            break;
          }
          case ShapeKind::kTriangle: {
            const double e0 = edge(tri[0], tri[1], tri[2], tri[3], px, py);
            const double e1 = edge(tri[2], tri[3], tri[4], tri[5], px, py);
            const double e2 = edge(tri[4], tri[5], tri[0], tri[1], px, py);
            inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
            break;
          }
        }
        if (!inside) continue;
        s.mask.at(y, x) = static_cast<std::uint8_t>(cls);
        for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = color[c];
      }
    }
  }

  // Global per-image color cast, then per-pixel noise.
  std::array<double, 3> gain{};
  for (double& g : gain) g = 1.0 + uniform(rng, -config.color_jitter, config.color_jitter);
  const double offset = uniform(rng, -config.color_jitter, config.color_jitter) * 0.4;
  std::normal_distribution<double> noise(0.0, config.pixel_noise);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double& v = s.image.at(y, x, c);
        const double n = config.pixel_noise > 0 ? noise(rng) : 0.0;
        v = clamp01(v * gain[c] + offset + n);
      }
    }
  }
  return s;
}

std::array<double, 3> Dataset::mean_color() const {
  std::array<double, 3> sum{0.0, 0.0, 0.0};
  std::size_t n = 0;
  for (const auto& s : samples) {
    for (int p = 0; p < s.image.pixels(); ++p) {
      auto px = s.image.pixel(p);
      for (int c = 0; c < 3; ++c) sum[c] += px[c];
    }
    n += static_cast<std::size_t>(s.image.pixels());
  }
  if (n == 0) return {0.5, 0.5, 0.5};
  for (double& v : sum) v /= static_cast<double>(n);
  return sum;
}

Dataset generate_dataset(std::size_t count, std::uint64_t seed,
                         const GeneratorConfig& config) {
  Dataset ds{config.height, config.width, config.num_classes, {}};
  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ds.samples.push_back(generate_sample(mix_seed(seed, i), config));
  }
  return ds;
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  out << kDatasetMagic << ' ' << kDatasetVersion << '\n'
      << "count " << dataset.size() << '\n'
      << "height " << dataset.height << '\n'
      << "width " << dataset.width << '\n'
      << "classes " << dataset.num_classes << '\n'
      << "end\n";
  for (const auto& s : dataset.samples) {
    if (s.image.height != dataset.height || s.image.width != dataset.width ||
        s.image.depth != 3 || s.mask.height != dataset.height ||
        s.mask.width != dataset.width) {
      throw InvalidParameter("write_dataset: sample shape does not match header");
    }
    for (double v : s.image.values) detail::write_f32_le(out, v);
    out.write(reinterpret_cast<const char*>(s.mask.labels.data()),
              static_cast<std::streamsize>(s.mask.labels.size()));
  }
}

void save_dataset(const std::string& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open dataset for writing: " + path);
  write_dataset(out, dataset);
  if (!out) throw IoError("failed writing dataset: " + path);
}

Dataset read_dataset(std::istream& in) {
  Dataset ds;
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
      if (key != kDatasetMagic || !(fields >> version)) {
        throw ParseError("not a pixcon dataset", line_no);
      }
      if (version != kDatasetVersion) {
        throw ParseError("unsupported dataset version " + std::to_string(version),
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
    if (key == "count") ok = static_cast<bool>(fields >> count);
    else if (key == "height") ok = static_cast<bool>(fields >> ds.height);
    else if (key == "width") ok = static_cast<bool>(fields >> ds.width);
    else if (key == "classes") ok = static_cast<bool>(fields >> ds.num_classes);
    else throw ParseError("unknown dataset header key '" + key + "'", line_no);
    if (!ok) throw ParseError("malformed value for '" + key + "'", line_no);
  }
  if (!ended) throw ParseError("dataset header not terminated by 'end'", line_no);
  if (ds.height < 1 || ds.width < 1 || ds.num_classes < 2) {
    throw ParseError("invalid dataset dimensions", line_no);
  }
  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Sample s{Image(ds.height, ds.width, 3), LabelMap(ds.height, ds.width)};
    for (double& v : s.image.values) {
      if (!detail::read_f32_le(in, v)) throw IoError("dataset payload truncated");
    }
    if (!in.read(reinterpret_cast<char*>(s.mask.labels.data()),
                 static_cast<std::streamsize>(s.mask.labels.size()))) {
      throw IoError("dataset payload truncated");
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset: " + path);
  try {
    return read_dataset(in);
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

Split split(std::size_t dataset_size, double labeled_fraction, std::uint64_t seed) {
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw InvalidParameter("split: labeled fraction must lie in (0, 1]");
  }
  const auto k = static_cast<std::size_t>(
      std::llround(labeled_fraction * static_cast<double>(dataset_size)));
  if (k == 0) throw InvalidParameter("split: labeled subset would be empty");
  Split out;
  out.unlabeled.resize(dataset_size);
  std::iota(out.unlabeled.begin(), out.unlabeled.end(), std::size_t{0});
  std::vector<std::size_t> order = out.unlabeled;
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  out.labeled.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(out.labeled.begin(), out.labeled.end());
  return out;
}

AugmentConfig AugmentConfig::identity() {
  AugmentConfig c;
  c.flip_probability = 0.0;
  c.min_crop_area = 1.0;
  c.brightness = 0.0;
  c.contrast = 0.0;
  c.hue = 0.0;
  c.min_cutouts = 0;
  c.max_cutouts = 0;
  return c;
}

double AugmentedPair::cutout_fraction() const {
  if (cutout_mask.empty()) return 0.0;
  const auto erased = std::count(cutout_mask.begin(), cutout_mask.end(), 1);
  return static_cast<double>(erased) / static_cast<double>(cutout_mask.size());
}

AugmentParams sample_augment_params(int height, int width, std::uint64_t seed,
                                    const AugmentConfig& config) {
  Rng rng(seed);
  AugmentParams p;
  p.flip = bernoulli(rng, config.flip_probability);
  const double area = uniform(rng, std::min(config.min_crop_area, 1.0), 1.0);
  const double scale = std::sqrt(area);
  p.crop_h = scale * height;
  p.crop_w = scale * width;
  p.crop_y0 = uniform(rng, 0.0, height - p.crop_h);
  p.crop_x0 = uniform(rng, 0.0, width - p.crop_w);
  p.brightness = uniform(rng, 1.0 - config.brightness, 1.0 + config.brightness);
  p.contrast = uniform(rng, 1.0 - config.contrast, 1.0 + config.contrast);
  p.hue = uniform(rng, -config.hue, config.hue);

  const int n_cut = config.max_cutouts > 0
                        ? uniform_int(rng, config.min_cutouts, config.max_cutouts)
                        : 0;
  const double total = static_cast<double>(height) * width;
  const int cap = static_cast<int>(std::floor(config.max_cutout_area * total));
  for (int k = 0; k < n_cut && cap >= 1; ++k) {
    const double a = uniform(rng, config.min_cutout_area, config.max_cutout_area);
    const double r = uniform(rng, 0.5, 2.0);
    int ch = std::clamp(static_cast<int>(std::lround(std::sqrt(a * total * r))), 1, height);
    int cw = std::clamp(static_cast<int>(std::lround(a * total / ch)), 1, width);
    while (ch * cw > cap) {
      if (cw > 1) --cw;
      else --ch;
    }
    Rect rect{uniform_int(rng, 0, height - ch), uniform_int(rng, 0, width - cw), ch, cw};
    p.cutouts.push_back(rect);
  }
  return p;
}

namespace {

double source_coord(int out_index, double origin, double extent, int out_size) {
  return origin + (out_index + 0.5) * extent / out_size - 0.5;
}

double sample_bilinear(const Image& img, double sy, double sx, int c) {
  sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
  const int y0 = static_cast<int>(std::floor(sy));
  const int x0 = static_cast<int>(std::floor(sx));
  const int y1 = std::min(y0 + 1, img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const double fy = sy - y0;
  const double fx = sx - x0;
  const double top = (1 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c);
  const double bot = (1 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c);
  return (1 - fy) * top + fy * bot;
}

Sample apply_geometry(const Sample& src, const AugmentParams& p) {
  const int h = src.image.height;
  const int w = src.image.width;
  Sample out{Image(h, w, src.image.depth), LabelMap(h, w)};
  for (int y = 0; y < h; ++y) {
    const double sy = source_coord(y, p.crop_y0, p.crop_h, h);
    const int my = std::clamp(
        static_cast<int>(std::floor(p.crop_y0 + (y + 0.5) * p.crop_h / h)), 0, h - 1);
    for (int x = 0; x < w; ++x) {
      const int xo = p.flip ? w - 1 - x : x;
      const double sx = source_coord(x, p.crop_x0, p.crop_w, w);
      const int mx = std::clamp(
          static_cast<int>(std::floor(p.crop_x0 + (x + 0.5) * p.crop_w / w)), 0, w - 1);
      for (int c = 0; c < src.image.depth; ++c) {
        out.image.at(y, xo, c) = sample_bilinear(src.image, sy, sx, c);
      }
      out.mask.at(y, xo) = src.mask.at(my, mx);
    }
  }
  return out;
}

// Hue rotation about the luma axis in YIQ space.
void rotate_hue(double turns, double& r, double& g, double& b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  const double i = 0.596 * r - 0.274 * g - 0.322 * b;
  const double q = 0.211 * r - 0.523 * g + 0.312 * b;
  const double cs = std::cos(2 * kPi * turns);
  const double sn = std::sin(2 * kPi * turns);
  const double i2 = cs * i - sn * q;
  const double q2 = sn * i + cs * q;
  r = y + 0.956 * i2 + 0.621 * q2;
  g = y - 0.272 * i2 - 0.647 * q2;
  b = y - 1.106 * i2 + 1.703 * q2;
}

}  // namespace

AugmentedPair apply_augmentation(const Sample& sample, const AugmentParams& params,
                                 const std::array<double, 3>& fill_color) {
  if (sample.image.height != sample.mask.height ||
      sample.image.width != sample.mask.width || sample.image.depth != 3) {
    throw InvalidParameter("augment: image and mask extents differ");
  }
  Sample geo = apply_geometry(sample, params);
  AugmentedPair pair;
  pair.height = geo.image.height;
  pair.width = geo.image.width;
  pair.geometry = params;
  pair.weak = geo.image;
  pair.mask = std::move(geo.mask);
  pair.strong = std::move(geo.image);

  Image& s = pair.strong;
  const bool jitter = params.brightness != 1.0 || params.contrast != 1.0 ||
                      params.hue != 0.0;
  if (jitter) {
    for (double& v : s.values) v *= params.brightness;
    double gray = 0.0;
    for (int p = 0; p < s.pixels(); ++p) {
      auto px = s.pixel(p);
      gray += 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    }
    gray /= s.pixels();
    for (double& v : s.values) v = (v - gray) * params.contrast + gray;
    if (params.hue != 0.0) {
      for (int p = 0; p < s.pixels(); ++p) {
        auto px = s.pixel(p);
        rotate_hue(params.hue, px[0], px[1], px[2]);
      }
    }
    for (double& v : s.values) v = clamp01(v);
  }

  pair.cutout_mask.assign(static_cast<std::size_t>(pair.height) * pair.width, 0);
  for (const Rect& r : params.cutouts) {
    for (int y = r.y0; y < r.y0 + r.height && y < pair.height; ++y) {
      for (int x = r.x0; x < r.x0 + r.width && x < pair.width; ++x) {
        pair.cutout_mask[y * pair.width + x] = 1;
        for (int c = 0; c < 3; ++c) s.at(y, x, c) = clamp01(fill_color[c]);
      }
    }
  }
  return pair;
}

AugmentedPair augment_pair(const Sample& sample, std::uint64_t seed,
                           const AugmentConfig& config) {
  const auto params =
      sample_augment_params(sample.image.height, sample.image.width, seed, config);
  return apply_augmentation(sample, params, config.fill_color);
}

Sample augment_weak(const Sample& sample, std::uint64_t seed,
                    const AugmentConfig& config) {
  const auto params =
      sample_augment_params(sample.image.height, sample.image.width, seed, config);
  return apply_geometry(sample, params);
}

PixelCoord correspondence(const AugmentedPair& pair, PixelCoord strong_pixel) {
  if (strong_pixel.y < 0 || strong_pixel.y >= pair.height || strong_pixel.x < 0 ||
      strong_pixel.x >= pair.width) {
    throw InvalidParameter("correspondence: pixel (" + std::to_string(strong_pixel.y) +
                           "," + std::to_string(strong_pixel.x) + ") out of bounds");
  }
  return strong_pixel;
}

}  // namespace pixcon
