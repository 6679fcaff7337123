#include "safetynet/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <string>

#include "safetynet/error.hpp"

namespace safetynet {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    fail(ErrorKind::Config, "learning_rate must be finite and nonnegative");
  if (!(weight_decay >= 0.0 && weight_decay < 1.0)) fail(ErrorKind::Config, "weight_decay must be in [0,1)");
  if (epochs == 0) fail(ErrorKind::Config, "epochs must be positive");
  if (batch_size == 0) fail(ErrorKind::Config, "batch_size must be positive");
}

namespace {

// Parameter gradient for one example, accumulated into `grads`.
void accumulate_gradient(const Network& net, std::span<const double> x, std::size_t label,
                         std::vector<Layer>& grads) {
  const ActivationRecord rec = forward(net, x);
  const auto& layers = net.layers();
  Vector g = rec.probs;
  g[label] -= 1.0;
  for (std::size_t s = layers.size(); s-- > 0;) {
    const Layer& l = layers[s];
    std::span<const double> input = s == 0 ? x : std::span<const double>(rec.hidden[s - 1]);
    Layer& gl = grads[s];
    for (std::size_t r = 0; r < l.weight.rows; ++r) {
      const double gr = g[r];
      if (gr == 0.0) continue;
      gl.bias[r] += gr;
      double* row = gl.weight.data.data() + r * l.weight.cols;
      for (std::size_t c = 0; c < l.weight.cols; ++c) row[c] += gr * input[c];
    }
    if (s == 0) break;
    Vector below(l.in_width(), 0.0);
    for (std::size_t r = 0; r < l.weight.rows; ++r) {
      const auto w = l.weight.row(r);
      for (std::size_t c = 0; c < w.size(); ++c) below[c] += g[r] * w[c];
    }
    const Vector& post = rec.hidden[s - 1];
    for (std::size_t j = 0; j < below.size(); ++j)
      if (post[j] <= 0.0) below[j] = 0.0;
    g = std::move(below);
  }
}

}  // namespace

Network train(Network net, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) fail(ErrorKind::Config, "cannot train on an empty dataset");
  if (data.width() != net.input_width()) fail(ErrorKind::Shape, "dataset width does not match network input");
  for (std::size_t y : data.labels)
    if (y >= net.num_classes()) fail(ErrorKind::Config, "label outside the network's classes");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<Layer> grads;
  for (const auto& l : net.layers()) grads.push_back({Matrix(l.weight.rows, l.weight.cols), Vector(l.bias.size())});

  const double keep = 1.0 - cfg.weight_decay;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      for (auto& gl : grads) {
        std::fill(gl.weight.data.begin(), gl.weight.data.end(), 0.0);
        std::fill(gl.bias.begin(), gl.bias.end(), 0.0);
      }
      for (std::size_t i = start; i < stop; ++i)
        accumulate_gradient(net, data.features[order[i]], data.labels[order[i]], grads);

      const double step = cfg.learning_rate / static_cast<double>(stop - start);
      auto& layers = net.mutable_layers();
      for (std::size_t s = 0; s < layers.size(); ++s) {
        auto& w = layers[s].weight.data;
        auto& b = layers[s].bias;
        for (std::size_t k = 0; k < w.size(); ++k) w[k] = keep * w[k] - step * grads[s].weight.data[k];
        for (std::size_t k = 0; k < b.size(); ++k) b[k] = keep * b[k] - step * grads[s].bias[k];
      }
    }
  }
  for (const auto& l : net.layers())
    for (double w : l.weight.data)
      if (!std::isfinite(w)) fail(ErrorKind::Numeric, "training diverged to non-finite parameters");
  return net;
}

double mean_cross_entropy(const Network& net, const Dataset& data) {
  if (data.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    total += loss_value(forward(net, data.features[i]), LossSpec::cross_entropy(data.labels[i]));
  return total / static_cast<double>(data.size());
}

double accuracy(const Network& net, const Dataset& data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hits += predict(net, data.features[i]) == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_f64(std::vector<unsigned char>& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail(ErrorKind::Corruption, "checkpoint truncated");
  }
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> checkpoint_bytes(const Network& net) {
  std::vector<unsigned char> out = {'S', 'N', 'E', 'T'};
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(net.layers().size()));
  for (std::size_t d : net.layer_dims()) put_u32(out, static_cast<std::uint32_t>(d));
  for (const auto& l : net.layers()) {
    for (double w : l.weight.data) put_f64(out, w);
    for (double b : l.bias) put_f64(out, b);
  }
  return out;
}

Network checkpoint_parse(std::span<const unsigned char> bytes) {
  if (bytes.size() < 4 || !std::equal(bytes.begin(), bytes.begin() + 4, "SNET"))
    fail(ErrorKind::Format, "checkpoint has bad magic bytes");
  Reader rd(bytes.subspan(4));
  const std::uint32_t version = rd.u32();
  if (version != kCheckpointVersion)
    fail(ErrorKind::Format, "unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t stages = rd.u32();
  if (stages == 0 || stages > 1024) fail(ErrorKind::Corruption, "implausible stage count");
  std::vector<std::size_t> dims(stages + 1);
  for (auto& d : dims) d = rd.u32();
  std::vector<Layer> layers;
  for (std::uint32_t s = 0; s < stages; ++s) {
    Layer l{Matrix(dims[s + 1], dims[s]), Vector(dims[s + 1])};
    for (double& w : l.weight.data) w = rd.f64();
    for (double& b : l.bias) b = rd.f64();
    layers.push_back(std::move(l));
  }
  if (!rd.done()) fail(ErrorKind::Corruption, "trailing bytes after checkpoint payload");
  return Network(std::move(layers));
}

void checkpoint_save(const Network& net, const std::filesystem::path& path) {
  const auto bytes = checkpoint_bytes(net);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

Network checkpoint_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return checkpoint_parse(bytes);
}

}  // namespace safetynet
