#include "safetynet/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "safetynet/error.hpp"

namespace safetynet {

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double d) { return std::isfinite(d); });
}

}  // namespace

Network::Network(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) fail(ErrorKind::Config, "network needs at least one stage");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    if (l.weight.rows == 0 || l.weight.cols == 0 || l.weight.data.size() != l.weight.rows * l.weight.cols)
      fail(ErrorKind::Shape, "stage " + std::to_string(i) + " has an empty or malformed weight matrix");
    if (l.bias.size() != l.weight.rows)
      fail(ErrorKind::Shape, "stage " + std::to_string(i) + " bias width does not match weight rows");
    if (i > 0 && layers_[i - 1].out_width() != l.in_width())
      fail(ErrorKind::Shape, "stage " + std::to_string(i) + " input width does not match previous output");
    if (!all_finite(l.weight.data) || !all_finite(l.bias))
      fail(ErrorKind::Numeric, "stage " + std::to_string(i) + " has non-finite parameters");
  }
}

std::vector<std::size_t> Network::layer_dims() const {
  std::vector<std::size_t> dims;
  if (layers_.empty()) return dims;
  dims.push_back(layers_.front().in_width());
  for (const auto& l : layers_) dims.push_back(l.out_width());
  return dims;
}

std::size_t Network::input_width() const { return layers_.empty() ? 0 : layers_.front().in_width(); }

std::size_t Network::num_classes() const { return layers_.empty() ? 0 : layers_.back().out_width(); }

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.data.size() + l.bias.size();
  return n;
}

Network make_network(std::span<const std::size_t> dims, std::uint64_t seed) {
  if (dims.size() < 2) fail(ErrorKind::Config, "network needs an input and an output width");
  if (std::find(dims.begin(), dims.end(), std::size_t{0}) != dims.end())
    fail(ErrorKind::Config, "layer widths must be positive");
  std::mt19937_64 rng(seed);
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const double limit = std::sqrt(6.0 / static_cast<double>(dims[i] + dims[i + 1]));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Layer l{Matrix(dims[i + 1], dims[i]), Vector(dims[i + 1], 0.0)};
    for (double& w : l.weight.data) w = dist(rng);
    layers.push_back(std::move(l));
  }
  return Network(std::move(layers));
}

Vector softmax(std::span<const double> logits) {
  Vector p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double m = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

ActivationRecord forward(const Network& net, std::span<const double> x) {
  if (x.size() != net.input_width())
    fail(ErrorKind::Shape, "input has width " + std::to_string(x.size()) + ", network expects " +
                               std::to_string(net.input_width()));
  if (!all_finite(x)) fail(ErrorKind::Domain, "input contains non-finite values");

  ActivationRecord rec;
  const auto& layers = net.layers();
  rec.hidden.reserve(net.num_hidden());
  Vector cur(x.begin(), x.end());
  for (std::size_t s = 0; s < layers.size(); ++s) {
    const Layer& l = layers[s];
    Vector out(l.bias);
    for (std::size_t r = 0; r < l.weight.rows; ++r) {
      const auto w = l.weight.row(r);
      double acc = 0.0;
      for (std::size_t c = 0; c < w.size(); ++c) acc += w[c] * cur[c];
      out[r] += acc;
    }
    if (s + 1 < layers.size()) {
      for (double& v : out) v = v > 0.0 ? v : 0.0;
      rec.hidden.push_back(out);
    }
    cur = std::move(out);
  }
  rec.logits = std::move(cur);
  rec.probs = softmax(rec.logits);
  return rec;
}

double loss_value(const ActivationRecord& rec, const LossSpec& loss) {
  if (loss.index >= rec.logits.size()) fail(ErrorKind::Domain, "loss label out of range");
  if (loss.kind == LossSpec::Kind::Logit) return rec.logits[loss.index];
  // log-sum-exp form keeps the value finite when the probability underflows
  const double m = *std::max_element(rec.logits.begin(), rec.logits.end());
  double sum = 0.0;
  for (double v : rec.logits) sum += std::exp(v - m);
  return m + std::log(sum) - rec.logits[loss.index];
}

Vector input_vjp(const Network& net, const ActivationRecord& rec, std::span<const double> dlogits,
                 const std::vector<Vector>& dhidden) {
  const auto& layers = net.layers();
  if (!dlogits.empty() && dlogits.size() != net.num_classes())
    fail(ErrorKind::Shape, "logit cotangent width mismatch");
  if (dhidden.size() > net.num_hidden()) fail(ErrorKind::Shape, "too many hidden cotangents");

  Vector grad(net.num_classes(), 0.0);
  if (!dlogits.empty()) std::copy(dlogits.begin(), dlogits.end(), grad.begin());

  for (std::size_t s = layers.size(); s-- > 0;) {
    const Layer& l = layers[s];
    if (s + 1 < layers.size()) {
      const Vector& post = rec.hidden[s];
      if (s < dhidden.size() && !dhidden[s].empty()) {
        if (dhidden[s].size() != post.size()) fail(ErrorKind::Shape, "hidden cotangent width mismatch");
        for (std::size_t j = 0; j < post.size(); ++j) grad[j] += dhidden[s][j];
      }
      for (std::size_t j = 0; j < post.size(); ++j)
        if (post[j] <= 0.0) grad[j] = 0.0;
    }
    Vector below(l.in_width(), 0.0);
    for (std::size_t r = 0; r < l.weight.rows; ++r) {
      const double g = grad[r];
      if (g == 0.0) continue;
      const auto w = l.weight.row(r);
      for (std::size_t c = 0; c < w.size(); ++c) below[c] += g * w[c];
    }
    grad = std::move(below);
  }
  return grad;
}

Vector input_gradient(const Network& net, std::span<const double> x, const LossSpec& loss) {
  const ActivationRecord rec = forward(net, x);
  if (loss.index >= net.num_classes()) fail(ErrorKind::Domain, "loss label out of range");
  Vector dlogits(net.num_classes(), 0.0);
  if (loss.kind == LossSpec::Kind::CrossEntropy) {
    dlogits = rec.probs;
    dlogits[loss.index] -= 1.0;
  } else {
    dlogits[loss.index] = 1.0;
  }
  Vector g = input_vjp(net, rec, dlogits);
  if (!all_finite(g)) fail(ErrorKind::Numeric, "non-finite input gradient");
  return g;
}

}  // namespace safetynet
