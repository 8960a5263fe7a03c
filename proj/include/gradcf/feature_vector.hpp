#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace gradcf {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
  bool operator==(const Interval&) const = default;
};

struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return height * width; }
  bool operator==(const ImageShape&) const = default;
};

// A flat real-valued instance, optionally carrying a 2-D image shape and
// per-feature domain bounds. Instances may sit outside their bounds (e.g.
// normalized test data beyond the training range); that is reportable
// through within_bounds(), never an error.
struct FeatureVector {
  std::vector<double> values;
  std::optional<ImageShape> image;
  // Empty means every feature has the default [0, 1] domain.
  std::vector<Interval> bounds;

  static FeatureVector flat(std::vector<double> values);
  static FeatureVector with_image(std::vector<double> values, ImageShape shape);

  std::size_t size() const { return values.size(); }
  bool is_image() const { return image.has_value(); }
  std::span<const double> span() const { return values; }

  Interval bound(std::size_t i) const;
  bool within_bounds(std::size_t i) const { return bound(i).contains(values[i]); }
  std::size_t out_of_bounds_count() const;

  // Throws DimensionError when the shape product or bounds length disagree
  // with the value count.
  void validate() const;

  bool operator==(const FeatureVector&) const = default;
};

}  // namespace gradcf
