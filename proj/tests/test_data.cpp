#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "fedgrow/dataset.hpp"
#include "fedgrow/error.hpp"
#include "fedgrow/model.hpp"
#include "fedgrow/partition.hpp"

using namespace fedgrow;
namespace fs = std::filesystem;

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_images(const fs::path& path, std::uint32_t magic, std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                  std::size_t bytes) {
  std::ofstream out(path, std::ios::binary);
  put_u32(out, magic);
  put_u32(out, n);
  put_u32(out, rows);
  put_u32(out, cols);
  for (std::size_t i = 0; i < bytes; ++i) out.put(static_cast<char>(i % 256));
}

void write_labels(const fs::path& path, std::uint32_t n, std::size_t bytes) {
  std::ofstream out(path, std::ios::binary);
  put_u32(out, 0x801);
  put_u32(out, n);
  for (std::size_t i = 0; i < bytes; ++i) out.put(static_cast<char>(i % 10));
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Each sample's single pixel holds its index, so shards can be audited.
Dataset indexed_dataset(std::size_t n, std::size_t classes) {
  Dataset d;
  d.classes = classes;
  d.samples = Tensor({n, 1, 1, 1});
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.samples[i] = static_cast<float>(i);
    d.labels[i] = static_cast<int>((i * 7) % classes);
  }
  return d;
}

std::vector<std::size_t> sample_ids(const ClientShard& s) {
  std::vector<std::size_t> ids;
  for (float v : s.samples.values()) ids.push_back(static_cast<std::size_t>(v));
  return ids;
}

}  // namespace

TEST_CASE("idx: well-formed raw files") {
  TempDir dir("fedgrow_idx_ok");
  write_images(dir.path / "img", 0x803, 3, 2, 2, 12);
  write_labels(dir.path / "lbl", 3, 3);
  const Tensor images = load_idx_images(dir.path / "img");
  CHECK(images.shape() == Shape{3, 2, 2, 1});
  CHECK(images[0] == 0.0f);
  CHECK(images[5] == doctest::Approx(5.0 / 255.0));
  CHECK(load_idx_labels(dir.path / "lbl") == std::vector<int>{0, 1, 2});

  write_images(dir.path / "white", 0x803, 1, 1, 1, 0);
  {
    std::ofstream out(dir.path / "white", std::ios::binary | std::ios::app);
    out.put(static_cast<char>(255));
  }
  CHECK(load_idx_images(dir.path / "white")[0] == 1.0f);
}

TEST_CASE("idx: malformed files raise format errors") {
  TempDir dir("fedgrow_idx_bad");
  write_images(dir.path / "magic", 0x804, 1, 2, 2, 4);
  CHECK_THROWS_AS(load_idx_images(dir.path / "magic"), FormatError);
  write_images(dir.path / "short", 0x803, 2, 2, 2, 5);
  CHECK_THROWS_AS(load_idx_images(dir.path / "short"), FormatError);
  write_labels(dir.path / "labels_short", 4, 2);
  CHECK_THROWS_AS(load_idx_labels(dir.path / "labels_short"), FormatError);
  CHECK_THROWS_AS(load_idx_labels(dir.path / "magic"), FormatError);
  CHECK_THROWS_AS(load_idx_images(dir.path / "missing"), FormatError);

  write_images(dir.path / "train-images-idx3-ubyte", 0x803, 3, 2, 2, 12);
  write_labels(dir.path / "train-labels-idx1-ubyte", 2, 2);
  write_images(dir.path / "t10k-images-idx3-ubyte", 0x803, 1, 2, 2, 4);
  write_labels(dir.path / "t10k-labels-idx1-ubyte", 1, 1);
  CHECK_THROWS_AS(load_idx_dataset(dir.path), FormatError);
  write_labels(dir.path / "train-labels-idx1-ubyte", 3, 3);
  const TrainTest ok = load_idx_dataset(dir.path);
  CHECK(ok.train.size() == 3);
  CHECK(ok.test.size() == 1);
}

TEST_CASE("idx: bundled gzipped digits") {
  const TrainTest d = load_idx_dataset(fs::path(FEDGROW_DATA_DIR) / "mnist");
  CHECK(d.train.samples.shape() == Shape{8000, 28, 28, 1});
  CHECK(d.test.samples.shape() == Shape{2000, 28, 28, 1});
  CHECK(d.train.classes == 10);
  float lo = 1.0f, hi = 0.0f;
  for (float v : d.train.samples.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo == 0.0f);
  CHECK(hi == 1.0f);
  std::set<int> labels(d.test.labels.begin(), d.test.labels.end());
  CHECK(labels.size() == 10);
}

TEST_CASE("synthetic blobs: determinism and errors") {
  SyntheticSpec spec;
  spec.classes = 3;
  spec.height = spec.width = 4;
  spec.per_class = 5;
  spec.seed = 9;
  const TrainTest a = make_synthetic(spec);
  const TrainTest b = make_synthetic(spec);
  CHECK(a.train.samples == b.train.samples);
  CHECK(a.train.labels == b.train.labels);
  CHECK(a.train.size() == 15);
  spec.seed = 10;
  CHECK_FALSE(make_synthetic(spec).train.samples == a.train.samples);
  spec.per_class = 0;
  CHECK_THROWS_AS(make_synthetic(spec), ConfigError);
  spec.per_class = 5;
  spec.classes = 1;
  CHECK_THROWS_AS(make_synthetic(spec), ConfigError);
}

TEST_CASE("synthetic blobs: a single dense layer separates two classes within 200 steps") {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.per_class = 200;
  spec.separation = 6.0;
  spec.seed = 3;
  const TrainTest d = make_synthetic(spec);
  ModelArch arch;
  arch.input = {28, 28, 1, false};
  arch.layers = {Flatten{}, Dense{784, 2}, Softmax{}};
  Rng rng(4);
  ModelParams p = init_params(arch, rng);
  const std::size_t n = d.train.size();
  for (std::size_t step = 0; step < 200; ++step) {
    const std::size_t begin = (step * 10) % n;
    const Tensor batch = slice_rows(d.train.samples, begin, begin + 10);
    std::span<const int> labels(d.train.labels.data() + begin, 10);
    sgd_step(arch, p, batch, labels, 0.01f, rng);
  }
  CHECK(accuracy(arch, p, d.train.samples, d.train.labels) >= 0.99);
}

TEST_CASE("partition: iid shards are an even, disjoint, exhaustive cover") {
  const Dataset d = indexed_dataset(1000, 10);
  PartitionSpec spec;
  spec.clients = 10;
  spec.seed = 5;
  const auto shards = partition(d, spec);
  REQUIRE(shards.size() == 10);
  std::vector<std::size_t> all;
  for (const auto& s : shards) {
    CHECK(s.n() == 100);
    CHECK(s.samples.dim(0) == s.n());
    const auto ids = sample_ids(s);
    all.insert(all.end(), ids.begin(), ids.end());
  }
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);

  const auto again = partition(d, spec);
  for (std::size_t c = 0; c < 10; ++c) CHECK(sample_ids(again[c]) == sample_ids(shards[c]));

  spec.clients = 7;
  const auto uneven = partition(d, spec);
  for (const auto& s : uneven) CHECK((s.n() == 142 || s.n() == 143));
}

TEST_CASE("partition: one client holds the whole dataset") {
  const Dataset d = indexed_dataset(50, 5);
  PartitionSpec spec;
  spec.clients = 1;
  const auto shards = partition(d, spec);
  REQUIRE(shards.size() == 1);
  auto ids = sample_ids(shards[0]);
  std::sort(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i) CHECK(ids[i] == i);
}

TEST_CASE("partition: label shards limit each client's labels") {
  const Dataset d = indexed_dataset(2000, 10);
  PartitionSpec spec;
  spec.scheme = PartitionScheme::label_shard;
  spec.clients = 100;
  spec.shards_per_client = 2;
  spec.seed = 8;
  const auto shards = partition(d, spec);
  std::vector<std::size_t> all;
  for (const auto& s : shards) {
    CHECK(s.n() >= 1);
    std::set<int> labels(s.labels.begin(), s.labels.end());
    CHECK(labels.size() <= 2);
    const auto ids = sample_ids(s);
    for (std::size_t k = 0; k < ids.size(); ++k) CHECK(d.labels[ids[k]] == s.labels[k]);
    all.insert(all.end(), ids.begin(), ids.end());
  }
  std::sort(all.begin(), all.end());
  CHECK(all.size() == 2000);
  CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
}

TEST_CASE("partition: errors") {
  const Dataset d = indexed_dataset(20, 10);
  PartitionSpec spec;
  spec.clients = 21;
  CHECK_THROWS_AS(partition(d, spec), ConfigError);
  spec.clients = 3;
  spec.scheme = PartitionScheme::label_shard;
  spec.shards_per_client = 2;
  CHECK_THROWS_AS(partition(d, spec), ConfigError);
  CHECK_THROWS_AS(partition(Dataset{}, PartitionSpec{}), ConfigError);
  CHECK(partition_scheme_from("label-shard-non-iid") == PartitionScheme::label_shard);
  CHECK_THROWS_AS(partition_scheme_from("dirichlet"), ConfigError);
}
