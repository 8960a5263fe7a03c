#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gradcf/feature_vector.hpp"
#include "gradcf/tensor_net.hpp"

namespace gradcf::data {

using net::Normalizer;

enum class Split { train, test };

struct Dataset {
  std::vector<FeatureVector> instances;
  std::vector<std::size_t> labels;
  Split split = Split::train;
  // Set once the instances have been mapped into [0, 1] with training-split
  // statistics.
  std::optional<Normalizer> normalizer;
  // Dense class index -> original label text (CSV) or digit (IDX).
  std::vector<std::string> class_names;

  std::size_t size() const { return instances.size(); }
  bool empty() const { return instances.empty(); }
  std::size_t feature_count() const { return instances.empty() ? 0 : instances.front().size(); }

  std::vector<net::LabeledView> views() const;
  // Throws ValidationError on length or dimension mismatch.
  void validate() const;
};

// Header row required. Features are all numeric columns except the label,
// in file order. Labels map to dense indices by first appearance; passing
// `known_classes` (e.g. the training split's names) keeps test labels aligned.
Dataset load_csv(const std::filesystem::path& path, const std::string& label_column, Split split,
                 const std::vector<std::string>& known_classes = {});

Normalizer fit_normalizer(const Dataset& train);
// Not clamped: out-of-range test values are kept and flagged through
// FeatureVector::within_bounds.
Dataset apply_normalizer(Dataset ds, const Normalizer& norm);

// Standard MNIST IDX pair (gzip or raw). Pixels are scaled by 1/255 into
// 28x28 (or the file's) image-shaped vectors. `limit` keeps the first n.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 Split split, std::optional<std::size_t> limit = std::nullopt);

// Debug writer; pixels are written as round(v * 255) clamped to [0, 255].
// A ".gz" suffix selects gzip output.
void write_idx(const Dataset& ds, const std::filesystem::path& images,
               const std::filesystem::path& labels);

struct SynthSpec {
  std::size_t d = 10;
  std::size_t classes = 2;
  std::size_t n_per_class = 200;
  double separation = 6.0;
  std::uint64_t seed = 0;
};

// K unit-variance Gaussian blobs; class k is centred at separation along
// axis (k mod d). Both splits carry n_per_class instances per class and are
// min-max normalized with the training split's range.
std::pair<Dataset, Dataset> synth_gaussian(const SynthSpec& spec);

enum class Membership { predicted, labeled };

struct ReferenceLogitStats {
  std::size_t target = 0;
  std::size_t requested = 0;
  std::size_t count = 0;
  std::vector<double> mean_logits;
  std::vector<std::size_t> sample_indices;          // into the training set
  std::vector<net::LogitVector> sample_logits;      // per retained sample
  std::vector<FeatureVector> samples;

  bool shortfall() const { return count < requested; }
};

// Uniform sampling without replacement from training instances whose model
// prediction (or label, under Membership::labeled) equals `target`. Uses all
// qualifying instances when fewer than n exist. Throws ValidationError when
// none qualify.
ReferenceLogitStats sample_reference_set(const Dataset& train, const net::NetworkModel& model,
                                         std::size_t target, std::size_t n, std::uint64_t seed,
                                         Membership membership = Membership::predicted);

// Binary PGM (P5, maxval 255). Values are mapped by round(v * 255) and
// clamped for display.
void write_pgm(const FeatureVector& image, const std::filesystem::path& path);
std::string pgm_bytes(const FeatureVector& image);

}  // namespace gradcf::data
