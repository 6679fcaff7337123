#include "safetynet/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "safetynet/error.hpp"

namespace safetynet {

namespace fs = std::filesystem;

void Dataset::validate() const {
  if (features.size() != labels.size()) fail(ErrorKind::Consistency, "feature and label counts differ");
  const std::size_t w = width();
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != w) fail(ErrorKind::Consistency, "row " + std::to_string(i) + " has ragged width");
    for (double v : features[i])
      if (!(v >= 0.0 && v <= 1.0)) fail(ErrorKind::Consistency, "row " + std::to_string(i) + " leaves [0,1]");
    if (labels[i] >= num_classes) fail(ErrorKind::Consistency, "row " + std::to_string(i) + " label out of range");
  }
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.num_classes = num_classes;
  out.features.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    out.features.push_back(features.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

namespace {

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const fs::path& path) {
  if (offset + 4 > buf.size()) fail(ErrorKind::Corruption, path.string() + ": truncated IDX header");
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

double parse_double(std::string_view cell, std::size_t line) {
  while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.front()))) cell.remove_prefix(1);
  while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.back()))) cell.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty() || !std::isfinite(v))
    fail(ErrorKind::Format, "line " + std::to_string(line) + ": non-numeric cell '" + std::string(cell) + "'");
  return v;
}

}  // namespace

Dataset load_idx(const fs::path& images, const fs::path& labels) {
  const auto img = read_bytes(images);
  const auto lab = read_bytes(labels);
  if (read_be32(img, 0, images) != 0x00000803u)
    fail(ErrorKind::Format, images.string() + ": bad IDX image magic");
  if (read_be32(lab, 0, labels) != 0x00000801u)
    fail(ErrorKind::Format, labels.string() + ": bad IDX label magic");

  const std::size_t count = read_be32(img, 4, images);
  const std::size_t rows = read_be32(img, 8, images);
  const std::size_t cols = read_be32(img, 12, images);
  const std::size_t label_count = read_be32(lab, 4, labels);
  if (count != label_count)
    fail(ErrorKind::Consistency, "IDX image count " + std::to_string(count) + " != label count " +
                                     std::to_string(label_count));
  const std::size_t pixels = rows * cols;
  if (img.size() < 16 + count * pixels) fail(ErrorKind::Corruption, images.string() + ": truncated pixel data");
  if (lab.size() < 8 + count) fail(ErrorKind::Corruption, labels.string() + ": truncated label data");

  Dataset ds;
  ds.features.reserve(count);
  ds.labels.reserve(count);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    Vector x(pixels);
    for (std::size_t p = 0; p < pixels; ++p) x[p] = img[16 + i * pixels + p] / 255.0;
    ds.features.push_back(std::move(x));
    ds.labels.push_back(lab[8 + i]);
    max_label = std::max<std::size_t>(max_label, lab[8 + i]);
  }
  ds.num_classes = std::max<std::size_t>(2, max_label + 1);
  return ds;
}

Dataset load_csv(const fs::path& path, std::size_t* clipped) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  Dataset ds;
  std::size_t n_clipped = 0;
  std::size_t arity = 0;
  std::size_t max_label = 0;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    for (;;) {
      const auto pos = rest.find(',');
      cells.push_back(rest.substr(0, pos));
      if (pos == std::string_view::npos) break;
      rest.remove_prefix(pos + 1);
    }
    if (cells.size() < 2) fail(ErrorKind::Format, "line " + std::to_string(lineno) + ": needs a label and features");
    if (arity == 0) arity = cells.size();
    if (cells.size() != arity)
      fail(ErrorKind::Format, "line " + std::to_string(lineno) + ": arity " + std::to_string(cells.size()) +
                                  " differs from " + std::to_string(arity));
    const double label = parse_double(cells[0], lineno);
    if (label < 0 || label != std::floor(label))
      fail(ErrorKind::Format, "line " + std::to_string(lineno) + ": label must be a nonnegative integer");
    Vector x;
    x.reserve(cells.size() - 1);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      double v = parse_double(cells[c], lineno);
      if (v < 0.0 || v > 1.0) {
        v = std::clamp(v, 0.0, 1.0);
        ++n_clipped;
      }
      x.push_back(v);
    }
    ds.features.push_back(std::move(x));
    ds.labels.push_back(static_cast<std::size_t>(label));
    max_label = std::max(max_label, ds.labels.back());
  }
  ds.num_classes = std::max<std::size_t>(2, max_label + 1);
  if (clipped) *clipped = n_clipped;
  return ds;
}

void save_csv(const Dataset& ds, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (double v : ds.features[i]) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out << ',' << std::string_view(buf, end - buf);
    }
    out << '\n';
  }
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

Dataset synth_blobs(std::size_t num_classes, std::size_t per_class, double spread, std::uint64_t seed) {
  if (num_classes < 2) fail(ErrorKind::Config, "synth_blobs needs at least two classes");
  if (!(spread > 0.0)) fail(ErrorKind::Config, "synth_blobs spread must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spread);
  Dataset ds;
  ds.num_classes = num_classes;
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(num_classes);
    const double cx = 0.5 + 0.35 * std::cos(angle);
    const double cy = 0.5 + 0.35 * std::sin(angle);
    for (std::size_t i = 0; i < per_class; ++i) {
      const double dx = noise(rng);
      const double dy = noise(rng);
      ds.features.push_back({std::clamp(cx + dx, 0.0, 1.0), std::clamp(cy + dy, 0.0, 1.0)});
      ds.labels.push_back(k);
    }
  }
  return ds;
}

Split split(const Dataset& ds, double train_frac, double val_frac, double test_frac, std::uint64_t seed) {
  if (!(train_frac > 0 && val_frac > 0 && test_frac > 0) ||
      std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
    fail(ErrorKind::Config, "split fractions must be positive and sum to 1");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n = static_cast<double>(ds.size());
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * n));
  const auto n_val = std::min(ds.size() - n_train, static_cast<std::size_t>(std::llround(val_frac * n)));

  Split s;
  s.train_idx.assign(order.begin(), order.begin() + n_train);
  s.val_idx.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  s.test_idx.assign(order.begin() + n_train + n_val, order.end());
  s.train = ds.subset(s.train_idx);
  s.val = ds.subset(s.val_idx);
  s.test = ds.subset(s.test_idx);
  return s;
}

}  // namespace safetynet
