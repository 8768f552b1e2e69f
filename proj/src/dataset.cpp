#include "fedgrow/dataset.hpp"

#include <zlib.h>

#include <array>
#include <cmath>
#include <memory>

#include "fedgrow/error.hpp"
#include "fedgrow/rng.hpp"

namespace fedgrow {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

class GzReader {
 public:
  explicit GzReader(const std::filesystem::path& path) : path_(path), file_(gzopen(path.c_str(), "rb"), &gzclose) {
    if (!file_) throw FormatError("cannot open " + path.string());
  }

  void read(void* dst, std::size_t bytes, const char* what) {
    auto* out = static_cast<unsigned char*>(dst);
    while (bytes > 0) {
      const auto chunk = static_cast<unsigned>(std::min<std::size_t>(bytes, 1u << 30));
      const int got = gzread(file_.get(), out, chunk);
      if (got <= 0) throw FormatError(path_.string() + ": truncated while reading " + what);
      out += got;
      bytes -= static_cast<std::size_t>(got);
    }
  }

  std::uint32_t read_u32(const char* what) {
    std::array<unsigned char, 4> b{};
    read(b.data(), b.size(), what);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::unique_ptr<gzFile_s, decltype(&gzclose)> file_;
};

std::filesystem::path find_file(const std::filesystem::path& dir, const std::string& stem) {
  for (const auto& candidate : {dir / stem, dir / (stem + ".gz")}) {
    if (std::filesystem::exists(candidate)) return candidate;
  }
  throw FormatError("missing " + (dir / stem).string() + "[.gz]");
}

}  // namespace

Tensor load_idx_images(const std::filesystem::path& path) {
  GzReader in(path);
  const std::uint32_t magic = in.read_u32("magic number");
  if (magic != kImageMagic) {
    throw FormatError(path.string() + ": bad magic number for an IDX image file");
  }
  const std::size_t n = in.read_u32("image count");
  const std::size_t rows = in.read_u32("row count");
  const std::size_t cols = in.read_u32("column count");
  std::vector<unsigned char> raw(n * rows * cols);
  in.read(raw.data(), raw.size(), "pixels");
  std::vector<float> values(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) values[i] = static_cast<float>(raw[i]) / 255.0f;
  return Tensor({n, rows, cols, 1}, std::move(values));
}

std::vector<int> load_idx_labels(const std::filesystem::path& path) {
  GzReader in(path);
  const std::uint32_t magic = in.read_u32("magic number");
  if (magic != kLabelMagic) {
    throw FormatError(path.string() + ": bad magic number for an IDX label file");
  }
  const std::size_t n = in.read_u32("label count");
  std::vector<unsigned char> raw(n);
  in.read(raw.data(), raw.size(), "labels");
  return std::vector<int>(raw.begin(), raw.end());
}

TrainTest load_idx_dataset(const std::filesystem::path& dir) {
  auto load = [&](const std::string& images, const std::string& labels) {
    Dataset d;
    d.samples = load_idx_images(find_file(dir, images));
    d.labels = load_idx_labels(find_file(dir, labels));
    if (d.samples.dim(0) != d.labels.size()) {
      throw FormatError(images + " has " + std::to_string(d.samples.dim(0)) + " images but " + labels + " has " +
                        std::to_string(d.labels.size()) + " labels");
    }
    return d;
  };
  TrainTest out{load("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
                load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")};
  int top = 0;
  for (int l : out.train.labels) top = std::max(top, l);
  for (int l : out.test.labels) top = std::max(top, l);
  out.train.classes = out.test.classes = static_cast<std::size_t>(top) + 1;
  return out;
}

TrainTest make_synthetic(const SyntheticSpec& spec) {
  const std::size_t dims = spec.height * spec.width * spec.channels;
  if (spec.classes < 2) throw ConfigError("synthetic data needs at least two classes");
  if (spec.per_class == 0) throw ConfigError("synthetic data with zero samples per class is empty");
  if (dims < spec.classes) throw ConfigError("synthetic sample dimension must be at least the class count");

  Rng rng(derive_seed(spec.seed, {0x5e, 1}));
  // Orthonormal class directions by Gram-Schmidt on Gaussian vectors.
  std::vector<std::vector<double>> dirs;
  while (dirs.size() < spec.classes) {
    std::vector<double> v(dims);
    for (double& x : v) x = rng.normal();
    for (const auto& u : dirs) {
      double dot = 0.0;
      for (std::size_t k = 0; k < dims; ++k) dot += v[k] * u[k];
      for (std::size_t k = 0; k < dims; ++k) v[k] -= dot * u[k];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (double& x : v) x /= norm;
    dirs.push_back(std::move(v));
  }
  const double radius = spec.separation / std::sqrt(2.0);

  auto draw = [&](std::size_t per_class, std::uint64_t stream) {
    Rng noise(derive_seed(spec.seed, {0x5e, stream}));
    Dataset d;
    d.classes = spec.classes;
    const std::size_t n = per_class * spec.classes;
    d.samples = Tensor({n, spec.height, spec.width, spec.channels});
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t label = i % spec.classes;
      d.labels[i] = static_cast<int>(label);
      float* row = d.samples.data() + i * dims;
      for (std::size_t k = 0; k < dims; ++k) {
        row[k] = static_cast<float>(radius * dirs[label][k] + noise.normal());
      }
    }
    return d;
  };
  TrainTest out{draw(spec.per_class, 2), Dataset{}};
  if (spec.test_per_class > 0) {
    out.test = draw(spec.test_per_class, 3);
  } else {
    out.test.classes = spec.classes;
    out.test.samples = Tensor({0, spec.height, spec.width, spec.channels});
  }
  return out;
}

}  // namespace fedgrow
