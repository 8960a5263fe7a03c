#include "gradcf/tensor_net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "gradcf/error.hpp"

namespace gradcf::net {

using nlohmann::json;

std::vector<double> Normalizer::apply(std::span<const double> raw) const {
  if (raw.size() != min.size()) {
    throw DimensionError("normalizer expects " + std::to_string(min.size()) + " features, got " +
                         std::to_string(raw.size()));
  }
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double range = max[i] - min[i];
    out[i] = range > 0.0 ? (raw[i] - min[i]) / range : 0.0;
  }
  return out;
}

std::vector<double> Normalizer::invert(std::span<const double> normalized) const {
  if (normalized.size() != min.size()) {
    throw DimensionError("normalizer expects " + std::to_string(min.size()) + " features, got " +
                         std::to_string(normalized.size()));
  }
  std::vector<double> out(normalized.size());
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    out[i] = min[i] + normalized[i] * (max[i] - min[i]);
  }
  return out;
}

void NetworkModel::validate() const {
  if (layers.empty()) throw ValidationError("model has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    const std::string where = "layer " + std::to_string(i);
    if (l.in == 0 || l.out == 0) throw ValidationError(where + " has a zero dimension");
    if (l.weights.size() != l.in * l.out) {
      throw ValidationError(where + " weight matrix is not " + std::to_string(l.out) + "x" +
                            std::to_string(l.in));
    }
    if (l.bias.size() != l.out) throw ValidationError(where + " bias length mismatch");
    if (i + 1 < layers.size() && layers[i + 1].in != l.out) {
      throw ValidationError(where + " output width " + std::to_string(l.out) +
                            " does not chain into layer " + std::to_string(i + 1) +
                            " input width " + std::to_string(layers[i + 1].in));
    }
    const auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(l.weights.begin(), l.weights.end(), finite) ||
        !std::all_of(l.bias.begin(), l.bias.end(), finite)) {
      throw ValidationError(where + " has non-finite parameters");
    }
  }
  if (layers.back().act != Activation::identity) {
    throw ValidationError("final layer must be identity (logits)");
  }
  if (input_shape && input_shape->size() != input_width()) {
    throw ValidationError("input shape does not match input width");
  }
  if (norm && (norm->min.size() != input_width() || norm->max.size() != input_width())) {
    throw ValidationError("normalizer length does not match input width");
  }
  if (!class_names.empty() && class_names.size() != class_count()) {
    throw ValidationError("class name count does not match class count");
  }
}

NetworkModel make_mlp(std::span<const std::size_t> widths, std::uint64_t seed) {
  if (widths.size() < 2) throw ValidationError("an MLP needs at least input and output widths");
  std::mt19937_64 rng(seed);
  NetworkModel model;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    Layer l;
    l.in = widths[i];
    l.out = widths[i + 1];
    l.act = i + 2 == widths.size() ? Activation::identity : Activation::relu;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(l.in)));
    l.weights.resize(l.in * l.out);
    for (double& w : l.weights) w = dist(rng);
    l.bias.assign(l.out, 0.0);
    model.layers.push_back(std::move(l));
  }
  model.validate();
  return model;
}

namespace {

void check_input(const NetworkModel& model, std::span<const double> x) {
  if (x.size() != model.input_width()) {
    throw DimensionError("input has " + std::to_string(x.size()) + " features, model expects " +
                         std::to_string(model.input_width()));
  }
}

void check_class(const NetworkModel& model, std::size_t target) {
  if (target >= model.class_count()) {
    throw RangeError("class index " + std::to_string(target) + " outside [0, " +
                     std::to_string(model.class_count()) + ")");
  }
}

void apply_activation(Activation act, std::span<double> v) {
  if (act == Activation::relu) {
    for (double& e : v) e = e > 0.0 ? e : 0.0;
  }
}

}  // namespace

ForwardTrace forward_trace(const NetworkModel& model, std::span<const double> x) {
  check_input(model, x);
  ForwardTrace trace;
  trace.activations.reserve(model.layers.size() + 1);
  trace.activations.emplace_back(x.begin(), x.end());
  for (const Layer& l : model.layers) {
    std::vector<double> out(l.out);
    kernels::gemv(l.view(), trace.activations.back(), l.bias, out);
    apply_activation(l.act, out);
    trace.activations.push_back(std::move(out));
  }
  return trace;
}

LogitVector forward(const NetworkModel& model, std::span<const double> x) {
  check_input(model, x);
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> next;
  for (const Layer& l : model.layers) {
    next.assign(l.out, 0.0);
    kernels::gemv(l.view(), cur, l.bias, next);
    apply_activation(l.act, next);
    cur.swap(next);
  }
  return cur;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - top);
    sum += p[i];
  }
  for (double& e : p) e /= sum;
  return p;
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::vector<double> backprop_to_input(const NetworkModel& model, const ForwardTrace& trace,
                                      std::span<const double> logit_grad) {
  std::vector<double> grad(logit_grad.begin(), logit_grad.end());
  std::vector<double> below;
  for (std::size_t i = model.layers.size(); i-- > 0;) {
    const Layer& l = model.layers[i];
    if (l.act == Activation::relu) {
      const auto& out = trace.activations[i + 1];
      for (std::size_t j = 0; j < l.out; ++j) {
        if (out[j] <= 0.0) grad[j] = 0.0;
      }
    }
    below.assign(l.in, 0.0);
    kernels::gemv_transposed(l.view(), grad, below);
    grad.swap(below);
  }
  return grad;
}

std::vector<double> softmax_gradient(std::span<const double> probabilities, std::size_t target) {
  std::vector<double> g(probabilities.size());
  const double pt = probabilities[target];
  for (std::size_t k = 0; k < probabilities.size(); ++k) {
    g[k] = pt * ((k == target ? 1.0 : 0.0) - probabilities[k]);
  }
  return g;
}

std::vector<double> input_gradient(const NetworkModel& model, std::span<const double> x,
                                   std::size_t target, GradientOf of) {
  check_class(model, target);
  const ForwardTrace trace = forward_trace(model, x);
  std::vector<double> seed;
  if (of == GradientOf::logit) {
    seed.assign(model.class_count(), 0.0);
    seed[target] = 1.0;
  } else {
    seed = softmax_gradient(softmax(trace.logits()), target);
  }
  return backprop_to_input(model, trace, seed);
}

double cross_entropy(std::span<const double> logits, std::size_t label) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - top);
  return top + std::log(sum) - logits[label];
}

ParamGradients param_gradients(const NetworkModel& model, std::span<const LabeledView> batch) {
  if (batch.empty()) throw ValidationError("param_gradients needs a non-empty batch");
  ParamGradients g;
  for (const Layer& l : model.layers) {
    g.weights.emplace_back(l.weights.size(), 0.0);
    g.biases.emplace_back(l.bias.size(), 0.0);
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<double> below;
  for (const LabeledView& ex : batch) {
    check_class(model, ex.label);
    const ForwardTrace trace = forward_trace(model, ex.x);
    g.loss += cross_entropy(trace.logits(), ex.label) * scale;
    // dCE/dz = softmax(z) - onehot(label)
    std::vector<double> grad = softmax(trace.logits());
    grad[ex.label] -= 1.0;
    for (std::size_t i = model.layers.size(); i-- > 0;) {
      const Layer& l = model.layers[i];
      if (l.act == Activation::relu) {
        const auto& out = trace.activations[i + 1];
        for (std::size_t j = 0; j < l.out; ++j) {
          if (out[j] <= 0.0) grad[j] = 0.0;
        }
      }
      kernels::accumulate_outer(grad, trace.activations[i], scale, g.weights[i], g.biases[i]);
      if (i == 0) break;
      below.assign(l.in, 0.0);
      kernels::gemv_transposed(l.view(), grad, below);
      grad.swap(below);
    }
  }
  return g;
}

void adam_step(AdamState& state, std::span<double> variable, std::span<const double> gradient) {
  if (variable.size() != gradient.size() || state.m.size() != variable.size() ||
      state.v.size() != variable.size()) {
    throw DimensionError("adam_step: variable, gradient and moment shapes differ");
  }
  const AdamHyper& h = state.hyper;
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < variable.size(); ++i) {
    const double g = gradient[i];
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    variable[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.epsilon);
  }
}

double accuracy(const NetworkModel& model, std::span<const LabeledView> data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  const auto n = static_cast<std::ptrdiff_t>(data.size());
#pragma omp parallel for reduction(+ : correct) schedule(static) num_threads(kernels::max_threads())
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& ex = data[static_cast<std::size_t>(i)];
    correct += predict(model, ex.x) == ex.label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainReport train(NetworkModel& model, std::span<const LabeledView> train_set,
                  std::span<const LabeledView> test_set, const TrainConfig& config) {
  model.validate();
  for (const auto* set : {&train_set, &test_set}) {
    for (const LabeledView& ex : *set) {
      check_class(model, ex.label);
      check_input(model, ex.x);
    }
  }
  TrainReport report;
  if (config.batch_size == 0) throw RangeError("batch size must be positive");

  std::vector<AdamState> w_state;
  std::vector<AdamState> b_state;
  const AdamHyper hyper{config.lr, 0.9, 0.999, 1e-8};
  for (const Layer& l : model.layers) {
    w_state.emplace_back(l.weights.size(), hyper);
    b_state.emplace_back(l.bias.size(), hyper);
  }

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<LabeledView> batch;
  for (std::size_t epoch = 0; epoch < config.epochs && !train_set.empty(); ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(train_set[order[i]]);
      const ParamGradients g = param_gradients(model, batch);
      for (std::size_t li = 0; li < model.layers.size(); ++li) {
        adam_step(w_state[li], model.layers[li].weights, g.weights[li]);
        adam_step(b_state[li], model.layers[li].bias, g.biases[li]);
      }
      epoch_loss += g.loss;
      ++batches;
    }
    report.final_loss = epoch_loss / static_cast<double>(batches);
    report.epochs = epoch + 1;
  }
  report.train_accuracy = accuracy(model, train_set);
  if (!test_set.empty()) report.test_accuracy = accuracy(model, test_set);
  return report;
}

namespace {

const char* activation_name(Activation act) {
  return act == Activation::relu ? "relu" : "identity";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw ParseError("unknown activation '" + name + "'");
}

}  // namespace

std::string model_to_json(const NetworkModel& model) {
  model.validate();
  json j;
  j["k"] = model.class_count();
  json layers = json::array();
  for (const Layer& l : model.layers) {
    json rows = json::array();
    for (std::size_t r = 0; r < l.out; ++r) {
      rows.push_back(std::vector<double>(l.weights.begin() + static_cast<std::ptrdiff_t>(r * l.in),
                                         l.weights.begin() + static_cast<std::ptrdiff_t>((r + 1) * l.in)));
    }
    layers.push_back({{"w", rows}, {"b", l.bias}, {"act", activation_name(l.act)}});
  }
  j["layers"] = std::move(layers);
  if (model.norm) j["norm"] = {{"min", model.norm->min}, {"max", model.norm->max}};
  if (model.input_shape) {
    j["shape"] = {{"height", model.input_shape->height}, {"width", model.input_shape->width}};
  }
  if (!model.class_names.empty()) j["classes"] = model.class_names;
  return j.dump();
}

NetworkModel model_from_json(const std::string& text) {
  NetworkModel model;
  try {
    const json j = json::parse(text);
    for (const json& jl : j.at("layers")) {
      Layer l;
      const json& rows = jl.at("w");
      l.out = rows.size();
      l.in = l.out == 0 ? 0 : rows.at(0).size();
      for (const json& row : rows) {
        if (row.size() != l.in) throw ValidationError("ragged weight matrix in model file");
        for (const json& v : row) l.weights.push_back(v.get<double>());
      }
      l.bias = jl.at("b").get<std::vector<double>>();
      l.act = parse_activation(jl.at("act").get<std::string>());
      model.layers.push_back(std::move(l));
    }
    if (j.contains("norm")) {
      model.norm = Normalizer{j["norm"].at("min").get<std::vector<double>>(),
                              j["norm"].at("max").get<std::vector<double>>()};
    }
    if (j.contains("shape")) {
      model.input_shape = ImageShape{j["shape"].at("height").get<std::size_t>(),
                                     j["shape"].at("width").get<std::size_t>()};
    }
    if (j.contains("classes")) model.class_names = j["classes"].get<std::vector<std::string>>();
    model.validate();
    if (j.at("k").get<std::size_t>() != model.class_count()) {
      throw ValidationError("declared class count k does not match the last layer width");
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed model file: ") + e.what());
  }
  return model;
}

void save_model(const NetworkModel& model, const std::filesystem::path& path) {
  const std::string text = model_to_json(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

NetworkModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return model_from_json(buf.str());
}

}  // namespace gradcf::net
