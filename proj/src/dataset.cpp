#include "optbench/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace optbench {

namespace fs = std::filesystem;

std::vector<std::vector<std::int64_t>> batches(const BatchStream& stream, int epoch) {
  const Dataset& ds = *stream.dataset;
  std::int64_t n = ds.train_size();
  if (stream.batch_size <= 0) {
    throw std::invalid_argument("batches: batch_size must be positive");
  }
  if (stream.batch_size > n) {
    throw std::invalid_argument("batches: batch_size " +
                                std::to_string(stream.batch_size) +
                                " exceeds train set size " + std::to_string(n));
  }
  Philox rng(stream.epoch_seed, Stream::kShuffle,
             static_cast<std::uint32_t>(epoch));
  std::vector<std::int64_t> perm = permutation(n, rng);
  std::int64_t count = n / stream.batch_size;
  std::vector<std::vector<std::int64_t>> out;
  out.reserve(static_cast<size_t>(count));
  for (std::int64_t b = 0; b < count; ++b) {
    out.emplace_back(perm.begin() + b * stream.batch_size,
                     perm.begin() + (b + 1) * stream.batch_size);
  }
  return out;
}

std::span<const std::int64_t> train_eval_view(const Dataset& ds) {
  return {ds.train_eval_indices.data(), ds.train_eval_indices.size()};
}

std::vector<std::int64_t> make_train_eval_indices(std::int64_t n_train,
                                                  std::int64_t n_test) {
  Philox rng(42, Stream::kTrainEvalSplit);
  std::vector<std::int64_t> perm = permutation(n_train, rng);
  std::int64_t take = std::min(n_train, n_test);
  perm.resize(static_cast<size_t>(take));
  return perm;
}

namespace {

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TensorF parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || bytes[0] != 0 || bytes[1] != 0) {
    throw std::runtime_error("parse_idx: bad magic number");
  }
  std::uint8_t dtype = bytes[2];
  int rank = bytes[3];
  if (dtype != 0x08) {
    throw std::runtime_error("parse_idx: unsupported element type 0x" +
                             std::to_string(dtype) + " (expected unsigned byte)");
  }
  if (rank < 1 || rank > 4 || bytes.size() < 4 + 4 * static_cast<size_t>(rank)) {
    throw std::runtime_error("parse_idx: bad dimension count");
  }
  std::vector<int> dims(static_cast<size_t>(rank));
  std::int64_t numel = 1;
  for (int i = 0; i < rank; ++i) {
    dims[static_cast<size_t>(i)] =
        static_cast<int>(read_be32(bytes.data() + 4 + 4 * i));
    numel *= dims[static_cast<size_t>(i)];
  }
  size_t header = 4 + 4 * static_cast<size_t>(rank);
  if (bytes.size() - header != static_cast<size_t>(numel)) {
    throw std::runtime_error("parse_idx: truncated payload, expected " +
                             std::to_string(numel) + " bytes, got " +
                             std::to_string(bytes.size() - header));
  }
  std::vector<float> values(static_cast<size_t>(numel));
  const float scale = rank >= 2 ? 1.0f / 255.0f : 1.0f;
  for (std::int64_t i = 0; i < numel; ++i) {
    values[static_cast<size_t>(i)] =
        static_cast<float>(bytes[header + static_cast<size_t>(i)]) * scale;
  }
  return TensorF(Shape(std::move(dims)), std::move(values));
}

std::pair<TensorF, std::vector<std::int32_t>> parse_cifar(
    std::span<const std::uint8_t> bytes) {
  constexpr size_t kRecord = 3073;
  if (bytes.size() % kRecord != 0) {
    throw std::runtime_error("parse_cifar: length " + std::to_string(bytes.size()) +
                             " is not a multiple of the 3073-byte record size");
  }
  int n = static_cast<int>(bytes.size() / kRecord);
  TensorF images = TensorF::zeros({n, 32, 32, 3});
  std::vector<std::int32_t> labels(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + static_cast<size_t>(i) * kRecord;
    labels[static_cast<size_t>(i)] = rec[0];
    // channel-major source (1024 R, 1024 G, 1024 B), NHWC destination
    float* dst = images.values.data() + static_cast<std::int64_t>(i) * 32 * 32 * 3;
    for (int c = 0; c < 3; ++c) {
      const std::uint8_t* plane = rec + 1 + c * 1024;
      for (int p = 0; p < 1024; ++p) {
        dst[p * 3 + c] = static_cast<float>(plane[p]) / 255.0f;
      }
    }
  }
  return {std::move(images), std::move(labels)};
}

Dataset synthetic_quadratic(const QuadraticSpec& spec, std::uint64_t split_seed) {
  auto draw = [&](Stream stream) {
    Philox rng(split_seed, stream);
    TensorF t = TensorF::zeros({1000, spec.dimension});
    for (float& v : t.values) v = static_cast<float>(rng.normal());
    return t;
  };
  Dataset ds;
  ds.name = "quadratic";
  ds.train_inputs = draw(Stream::kSynthTrain);
  ds.test_inputs = draw(Stream::kSynthTest);
  ds.train_eval_indices = make_train_eval_indices(1000, 1000);
  return ds;
}

Dataset synthetic_two_d(double sigma, std::uint64_t split_seed) {
  auto draw = [&](Stream stream) {
    Philox rng(split_seed, stream);
    TensorF t = TensorF::zeros({1000, 2});
    for (float& v : t.values) v = static_cast<float>(rng.normal() * sigma);
    return t;
  };
  Dataset ds;
  ds.name = "two_d";
  ds.train_inputs = draw(Stream::kSynthTrain);
  ds.test_inputs = draw(Stream::kSynthTest);
  ds.train_eval_indices = make_train_eval_indices(1000, 1000);
  return ds;
}

const std::vector<std::string>& dataset_ids() {
  static const std::vector<std::string> ids = {"mnist", "fmnist", "cifar10",
                                               "quadratic", "two_d"};
  return ids;
}

namespace {

Dataset load_idx_pair(const std::string& name, const fs::path& dir) {
  Dataset ds;
  ds.name = name;
  ds.num_classes = 10;
  TensorF train_images = parse_idx(read_file(dir / "train-images-idx3-ubyte"));
  TensorF train_labels = parse_idx(read_file(dir / "train-labels-idx1-ubyte"));
  TensorF test_images = parse_idx(read_file(dir / "t10k-images-idx3-ubyte"));
  TensorF test_labels = parse_idx(read_file(dir / "t10k-labels-idx1-ubyte"));

  auto to_nhwc = [](TensorF& t) {
    if (t.shape.rank() == 3) {
      t.shape = Shape{t.shape[0], t.shape[1], t.shape[2], 1};
    }
  };
  to_nhwc(train_images);
  to_nhwc(test_images);
  auto to_ints = [](const TensorF& t) {
    std::vector<std::int32_t> out(t.values.size());
    for (size_t i = 0; i < out.size(); ++i)
      out[i] = static_cast<std::int32_t>(t.values[i]);
    return out;
  };
  ds.train_inputs = std::move(train_images);
  ds.test_inputs = std::move(test_images);
  ds.train_labels = to_ints(train_labels);
  ds.test_labels = to_ints(test_labels);
  ds.train_eval_indices = make_train_eval_indices(ds.train_size(), ds.test_size());
  return ds;
}

Dataset load_cifar10(const fs::path& dir) {
  Dataset ds;
  ds.name = "cifar10";
  ds.num_classes = 10;
  std::vector<float> train_pixels;
  std::vector<std::int32_t> train_labels;
  int total = 0;
  for (int b = 1; b <= 5; ++b) {
    auto [imgs, labs] = parse_cifar(
        read_file(dir / ("data_batch_" + std::to_string(b) + ".bin")));
    train_pixels.insert(train_pixels.end(), imgs.values.begin(), imgs.values.end());
    train_labels.insert(train_labels.end(), labs.begin(), labs.end());
    total += imgs.shape[0];
  }
  ds.train_inputs = TensorF(Shape{total, 32, 32, 3}, std::move(train_pixels));
  ds.train_labels = std::move(train_labels);
  auto [test_imgs, test_labs] = parse_cifar(read_file(dir / "test_batch.bin"));
  ds.test_inputs = std::move(test_imgs);
  ds.test_labels = std::move(test_labs);

  // Per-channel standardization with training-set constants.
  double mean[3] = {0, 0, 0}, var[3] = {0, 0, 0};
  std::int64_t per_channel = ds.train_inputs.numel() / 3;
  for (std::int64_t i = 0; i < ds.train_inputs.numel(); ++i) {
    mean[i % 3] += ds.train_inputs.values[static_cast<size_t>(i)];
  }
  for (double& m : mean) m /= static_cast<double>(per_channel);
  for (std::int64_t i = 0; i < ds.train_inputs.numel(); ++i) {
    double d = ds.train_inputs.values[static_cast<size_t>(i)] - mean[i % 3];
    var[i % 3] += d * d;
  }
  for (double& v : var) v = std::sqrt(v / static_cast<double>(per_channel));
  auto standardize = [&](TensorF& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      t.values[static_cast<size_t>(i)] = static_cast<float>(
          (t.values[static_cast<size_t>(i)] - mean[i % 3]) / var[i % 3]);
    }
  };
  standardize(ds.train_inputs);
  standardize(ds.test_inputs);
  ds.train_eval_indices = make_train_eval_indices(ds.train_size(), ds.test_size());
  return ds;
}

}  // namespace

Dataset load_dataset(const std::string& id, const fs::path& cache_dir) {
  if (id == "mnist" || id == "fmnist") {
    return load_idx_pair(id, cache_dir / id);
  }
  if (id == "cifar10") {
    return load_cifar10(cache_dir / "cifar10" / "cifar-10-batches-bin");
  }
  if (id == "quadratic") {
    return synthetic_quadratic(QuadraticSpec{}, kSyntheticDataSeed);
  }
  if (id == "two_d") {
    return synthetic_two_d(kTwoDNoiseSigma, kSyntheticDataSeed);
  }
  std::string valid;
  for (const auto& v : dataset_ids()) valid += (valid.empty() ? "" : ", ") + v;
  throw std::invalid_argument("unknown dataset '" + id + "' (valid: " + valid + ")");
}

}  // namespace optbench
