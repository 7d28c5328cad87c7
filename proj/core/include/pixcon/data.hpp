#pragma once

// Synthetic segmentation data, labeled/unlabeled splits, and the
// weak/strong augmentation pair with its pixel correspondence.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "pixcon/tensor.hpp"

namespace pixcon {

struct Sample {
  Image image;    // H×W×3 in [0,1]
  LabelMap mask;  // H×W
};

struct GeneratorConfig {
  int height = 64;
  int width = 64;
  int num_classes = 5;
  int shapes_per_image = 3;
  // Per-pixel Gaussian noise σ and per-image global color perturbation.
  double pixel_noise = 0.06;
  double color_jitter = 0.25;
};

/// Background class 0 plus 1..shapes_per_image rectangles, disks or
/// triangles, each with a class in {1..C−1} and a class-correlated base
/// color. Deterministic per seed.
Sample generate_sample(std::uint64_t seed, const GeneratorConfig& config);

struct Dataset {
  int height = 0;
  int width = 0;
  int num_classes = 0;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  /// Mean RGB over all pixels of all images (cutout fill color).
  std::array<double, 3> mean_color() const;
};

/// `count` samples with seeds derived from `seed`.
Dataset generate_dataset(std::size_t count, std::uint64_t seed,
                         const GeneratorConfig& config);

// File format: "pixcon-dataset 1" header with count/height/width/classes
// lines, terminated by "end\n", followed by per-sample float32 HWC image and
// uint8 mask payloads, little-endian.
void write_dataset(std::ostream& out, const Dataset& dataset);
void save_dataset(const std::string& path, const Dataset& dataset);
Dataset read_dataset(std::istream& in);
Dataset load_dataset(const std::string& path);

struct Split {
  std::vector<std::size_t> labeled;    // sorted, distinct
  std::vector<std::size_t> unlabeled;  // every index (labeled included)
};

/// Labeled subset of round(fraction·n) indices chosen by seed.
Split split(std::size_t dataset_size, double labeled_fraction, std::uint64_t seed);

struct AugmentConfig {
  double flip_probability = 0.5;
  double min_crop_area = 0.5;  // crop area fraction drawn from U(min, 1)
  double brightness = 0.4;     // scale factor U(1−b, 1+b)
  double contrast = 0.4;       // scale factor U(1−c, 1+c)
  double hue = 0.1;            // rotation in turns, U(−h, h)
  int min_cutouts = 1;
  int max_cutouts = 2;
  double max_cutout_area = 0.125;
  double min_cutout_area = 0.02;
  std::array<double, 3> fill_color{0.5, 0.5, 0.5};

  /// Geometry only, no jitter, no cutout.
  static AugmentConfig identity();
};

struct Rect {
  int y0 = 0;
  int x0 = 0;
  int height = 0;
  int width = 0;
};

// Resolved random draws of one augmentation.
struct AugmentParams {
  bool flip = false;
  double crop_y0 = 0.0;  // crop window in source pixel units
  double crop_x0 = 0.0;
  double crop_h = 0.0;
  double crop_w = 0.0;
  double brightness = 1.0;
  double contrast = 1.0;
  double hue = 0.0;
  std::vector<Rect> cutouts;
};

struct AugmentedPair {
  Image weak;
  Image strong;
  LabelMap mask;        // ground truth after geometry (shared by both views)
  AugmentParams geometry;
  std::vector<std::uint8_t> cutout_mask;  // H×W, 1 = erased in strong
  int height = 0;
  int width = 0;

  double cutout_fraction() const;
};

AugmentParams sample_augment_params(int height, int width, std::uint64_t seed,
                                    const AugmentConfig& config);

AugmentedPair apply_augmentation(const Sample& sample, const AugmentParams& params,
                                 const std::array<double, 3>& fill_color);

AugmentedPair augment_pair(const Sample& sample, std::uint64_t seed,
                           const AugmentConfig& config = {});

/// Applies only the geometric part (flip, crop, resize) to a sample.
Sample augment_weak(const Sample& sample, std::uint64_t seed,
                    const AugmentConfig& config = {});

struct PixelCoord {
  int y = 0;
  int x = 0;
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

/// Weak-view pixel corresponding to a strong-view pixel. Both views share one
/// geometry, so this is the identity; throws InvalidParameter out of bounds.
PixelCoord correspondence(const AugmentedPair& pair, PixelCoord strong_pixel);

}  // namespace pixcon
