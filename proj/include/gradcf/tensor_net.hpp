#pragma once

// Minimal dense feed-forward classifier with reverse-mode gradients to
// parameters (training) and to inputs (explanation).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradcf/feature_vector.hpp"
#include "gradcf/kernels.hpp"

namespace gradcf::net {

enum class Activation { relu, identity };

struct Layer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  // row-major, out x in
  std::vector<double> bias;     // out
  Activation act = Activation::identity;

  kernels::MatrixView view() const { return {weights, out, in}; }
  bool operator==(const Layer&) const = default;
};

// Per-feature min/max used to map raw features into [0, 1].
struct Normalizer {
  std::vector<double> min;
  std::vector<double> max;

  std::size_t size() const { return min.size(); }
  // (v - min) / (max - min); constant features map to 0.0. No clamping.
  std::vector<double> apply(std::span<const double> raw) const;
  std::vector<double> invert(std::span<const double> normalized) const;
  bool operator==(const Normalizer&) const = default;
};

struct NetworkModel {
  std::vector<Layer> layers;
  std::optional<ImageShape> input_shape;
  std::optional<Normalizer> norm;
  std::vector<std::string> class_names;

  std::size_t input_width() const { return layers.empty() ? 0 : layers.front().in; }
  std::size_t class_count() const { return layers.empty() ? 0 : layers.back().out; }

  // Dimension chain, buffer sizes, identity output layer, finite weights.
  // Throws ValidationError.
  void validate() const;
  bool operator==(const NetworkModel&) const = default;
};

using LogitVector = std::vector<double>;

// He-initialized ReLU MLP; the last layer is identity. widths = {in, h1, ..., K}.
NetworkModel make_mlp(std::span<const std::size_t> widths, std::uint64_t seed);

LogitVector forward(const NetworkModel& model, std::span<const double> x);
inline LogitVector forward(const NetworkModel& model, const FeatureVector& x) {
  return forward(model, x.span());
}

// Softmax with max subtraction.
std::vector<double> softmax(std::span<const double> logits);

std::size_t argmax(std::span<const double> values);
inline std::size_t predict(const NetworkModel& model, std::span<const double> x) {
  return argmax(forward(model, x));
}

// Post-activation outputs of every layer; activations[0] is the input and
// activations.back() the logits.
struct ForwardTrace {
  std::vector<std::vector<double>> activations;

  const LogitVector& logits() const { return activations.back(); }
};

ForwardTrace forward_trace(const NetworkModel& model, std::span<const double> x);

// Vector-Jacobian product: pulls a gradient on the logits back to the input.
std::vector<double> backprop_to_input(const NetworkModel& model, const ForwardTrace& trace,
                                      std::span<const double> logit_grad);

// d softmax(z)_target / dz
std::vector<double> softmax_gradient(std::span<const double> probabilities, std::size_t target);

enum class GradientOf { logit, probability };

std::vector<double> input_gradient(const NetworkModel& model, std::span<const double> x,
                                   std::size_t target, GradientOf of);

// log-sum-exp(z) - z[label]
double cross_entropy(std::span<const double> logits, std::size_t label);

struct LabeledView {
  std::span<const double> x;
  std::size_t label = 0;
};

struct ParamGradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;
  double loss = 0.0;  // mean cross-entropy over the batch
};

// Mean cross-entropy gradient over a non-empty batch.
ParamGradients param_gradients(const NetworkModel& model, std::span<const LabeledView> batch);

struct AdamHyper {
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamHyper hyper;
  std::size_t t = 0;
  std::vector<double> m;
  std::vector<double> v;

  AdamState() = default;
  AdamState(std::size_t n, AdamHyper h) : hyper(h), m(n, 0.0), v(n, 0.0) {}
};

// One bias-corrected Adam update of `variable` in place. Increments t.
void adam_step(AdamState& state, std::span<double> variable, std::span<const double> gradient);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::size_t epochs = 0;
  double final_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
};

double accuracy(const NetworkModel& model, std::span<const LabeledView> data);

// Mini-batch Adam on mean cross-entropy; deterministic given config.seed.
TrainReport train(NetworkModel& model, std::span<const LabeledView> train_set,
                  std::span<const LabeledView> test_set, const TrainConfig& config);

// JSON model file; doubles round-trip exactly.
void save_model(const NetworkModel& model, const std::filesystem::path& path);
NetworkModel load_model(const std::filesystem::path& path);
std::string model_to_json(const NetworkModel& model);
NetworkModel model_from_json(const std::string& text);

}  // namespace gradcf::net
