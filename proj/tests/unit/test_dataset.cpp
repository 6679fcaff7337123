#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "safetynet/dataset.hpp"
#include "safetynet/train.hpp"
#include "test_util.hpp"

using namespace safetynet;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

// two 2x2 images and their labels, headers spelled out byte by byte
const std::vector<unsigned char> kImages = {0x00, 0x00, 0x08, 0x03, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x02,
                                            0x00, 0x00, 0x00, 0x02, 0,    255,  128,  0,    255,  255,  0,    64};
const std::vector<unsigned char> kLabels = {0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x02, 3, 1};

}  // namespace

TEST_CASE("load_idx decodes a hand-built pair") {
  const auto dir = testutil::scratch_dir("idx");
  write_file(dir / "img", kImages);
  write_file(dir / "lab", kLabels);
  const Dataset ds = load_idx(dir / "img", dir / "lab");
  REQUIRE(ds.size() == 2);
  CHECK(ds.width() == 4);
  CHECK(ds.features[0] == Vector{0.0, 1.0, 128.0 / 255.0, 0.0});
  CHECK(ds.features[1] == Vector{1.0, 1.0, 0.0, 64.0 / 255.0});
  CHECK(ds.labels == std::vector<std::size_t>{3, 1});
  CHECK(ds.num_classes == 4);
  ds.validate();
}

TEST_CASE("load_idx reads big-endian dimension fields") {
  const auto dir = testutil::scratch_dir("idx28");
  std::vector<unsigned char> img = {0x00, 0x00, 0x08, 0x03, 0x00, 0x00, 0x00, 0x01,
                                    0x00, 0x00, 0x00, 0x1C, 0x00, 0x00, 0x00, 0x1C};
  img.resize(16 + 28 * 28, 7);
  write_file(dir / "img", img);
  write_file(dir / "lab", {0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x01, 5});
  const Dataset ds = load_idx(dir / "img", dir / "lab");
  CHECK(ds.width() == 784);
  CHECK(ds.features[0][783] == 7.0 / 255.0);
}

TEST_CASE("load_idx error kinds") {
  const auto dir = testutil::scratch_dir("idxbad");
  write_file(dir / "img", kImages);
  write_file(dir / "lab", kLabels);

  auto wrong_magic = kLabels;
  wrong_magic[3] = 0x03;
  write_file(dir / "lab_magic", wrong_magic);
  CHECK_FAILS_WITH(load_idx(dir / "img", dir / "lab_magic"), ErrorKind::Format);
  CHECK_FAILS_WITH(load_idx(dir / "lab", dir / "lab"), ErrorKind::Format);

  auto three = kLabels;
  three[7] = 3;
  three.push_back(0);
  write_file(dir / "lab3", three);
  CHECK_FAILS_WITH(load_idx(dir / "img", dir / "lab3"), ErrorKind::Consistency);

  auto short_img = kImages;
  short_img.pop_back();
  write_file(dir / "img_short", short_img);
  CHECK_FAILS_WITH(load_idx(dir / "img_short", dir / "lab"), ErrorKind::Corruption);

  CHECK_FAILS_WITH(load_idx(dir / "missing", dir / "lab"), ErrorKind::Io);
}

TEST_CASE("load_csv parses, clips and rejects") {
  const auto dir = testutil::scratch_dir("csv");
  write_text(dir / "ok.csv", "1,0.5,0.25\n0,1.5,-0.5\n\n2,0,1\n");
  std::size_t clipped = 0;
  const Dataset ds = load_csv(dir / "ok.csv", &clipped);
  REQUIRE(ds.size() == 3);
  CHECK(ds.labels[0] == 1);
  CHECK(ds.features[0] == Vector{0.5, 0.25});
  CHECK(ds.features[1] == Vector{1.0, 0.0});
  CHECK(clipped == 2);
  CHECK(ds.num_classes == 3);

  write_text(dir / "ragged.csv", "1,0.1,0.2,0.3\n0,0.1,0.2\n");
  CHECK_FAILS_WITH(load_csv(dir / "ragged.csv"), ErrorKind::Format);
  write_text(dir / "text.csv", "1,0.1,abc\n");
  CHECK_FAILS_WITH(load_csv(dir / "text.csv"), ErrorKind::Format);
  write_text(dir / "label.csv", "1.5,0.1,0.2\n");
  CHECK_FAILS_WITH(load_csv(dir / "label.csv"), ErrorKind::Format);
}

TEST_CASE("save_csv and load_csv round trip exactly") {
  const auto dir = testutil::scratch_dir("csvrt");
  const Dataset ds = synth_blobs(3, 20, 0.1, 5);
  save_csv(ds, dir / "a.csv");
  const Dataset back = load_csv(dir / "a.csv");
  CHECK(back.features == ds.features);
  CHECK(back.labels == ds.labels);
}

TEST_CASE("synth_blobs is seeded and sits on the circle") {
  const Dataset a = synth_blobs(4, 50, 0.05, 9);
  const Dataset b = synth_blobs(4, 50, 0.05, 9);
  CHECK(a.features == b.features);
  CHECK_FALSE(synth_blobs(4, 50, 0.05, 10).features == a.features);
  a.validate();

  const Dataset tight = synth_blobs(3, 5, 1e-12, 1);
  for (std::size_t i = 0; i < tight.size(); ++i) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(tight.labels[i]) / 3.0;
    CHECK(tight.features[i][0] == doctest::Approx(0.5 + 0.35 * std::cos(angle)).epsilon(1e-9));
    CHECK(tight.features[i][1] == doctest::Approx(0.5 + 0.35 * std::sin(angle)).epsilon(1e-9));
  }

  CHECK_FAILS_WITH(synth_blobs(1, 5, 0.1, 1), ErrorKind::Config);
  CHECK_FAILS_WITH(synth_blobs(3, 5, 0.0, 1), ErrorKind::Config);
}

TEST_CASE("two well separated blobs are linearly separable") {
  const Dataset ds = synth_blobs(2, 200, 0.05, 3);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 1;
  const Network linear = train(make_network(std::vector<std::size_t>{2, 2}, 4), ds, cfg);
  CHECK(accuracy(linear, ds) >= 0.99);
}

TEST_CASE("split partitions the indices") {
  Dataset ds;
  ds.num_classes = 2;
  for (std::size_t i = 0; i < 100; ++i) {
    ds.features.push_back({static_cast<double>(i) / 100.0});
    ds.labels.push_back(i % 2);
  }
  const Split s = split(ds, 0.8, 0.1, 0.1, 7);
  CHECK(s.train.size() == 80);
  CHECK(s.val.size() == 10);
  CHECK(s.test.size() == 10);
  std::set<std::size_t> all;
  all.insert(s.train_idx.begin(), s.train_idx.end());
  all.insert(s.val_idx.begin(), s.val_idx.end());
  all.insert(s.test_idx.begin(), s.test_idx.end());
  CHECK(all.size() == 100);
  CHECK(*all.rbegin() == 99);

  const Split again = split(ds, 0.8, 0.1, 0.1, 7);
  CHECK(again.train_idx == s.train_idx);
  CHECK_FALSE(split(ds, 0.8, 0.1, 0.1, 8).train_idx == s.train_idx);

  CHECK_FAILS_WITH(split(ds, 0.8, 0.1, 0.2, 7), ErrorKind::Config);
  CHECK_FAILS_WITH(split(ds, 1.0, 0.0, 0.0, 7), ErrorKind::Config);
}

TEST_CASE("validate catches out-of-box values and labels") {
  Dataset ds{{{0.5, 1.2}}, {0}, 2};
  CHECK_FAILS_WITH(ds.validate(), ErrorKind::Consistency);
  Dataset lab{{{0.5, 0.2}}, {2}, 2};
  CHECK_FAILS_WITH(lab.validate(), ErrorKind::Consistency);
}
