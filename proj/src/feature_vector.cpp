#include "gradcf/feature_vector.hpp"

#include <string>

#include "gradcf/error.hpp"

namespace gradcf {

FeatureVector FeatureVector::flat(std::vector<double> values) {
  FeatureVector fv;
  fv.values = std::move(values);
  return fv;
}

FeatureVector FeatureVector::with_image(std::vector<double> values, ImageShape shape) {
  FeatureVector fv;
  fv.values = std::move(values);
  fv.image = shape;
  fv.validate();
  return fv;
}

Interval FeatureVector::bound(std::size_t i) const {
  return bounds.empty() ? Interval{} : bounds.at(i);
}

std::size_t FeatureVector::out_of_bounds_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < values.size(); ++i) n += within_bounds(i) ? 0 : 1;
  return n;
}

void FeatureVector::validate() const {
  if (image && image->size() != values.size()) {
    throw DimensionError("image shape " + std::to_string(image->height) + "x" +
                         std::to_string(image->width) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  if (!bounds.empty() && bounds.size() != values.size()) {
    throw DimensionError("bounds length " + std::to_string(bounds.size()) +
                         " does not match " + std::to_string(values.size()) + " values");
  }
}

}  // namespace gradcf
