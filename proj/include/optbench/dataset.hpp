#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "optbench/rng.hpp"
#include "optbench/tensor.hpp"

namespace optbench {

// In-memory dataset. Inputs are float32; class labels are integer vectors
// (empty for problems whose loss is given explicitly). train_eval_indices is
// a fixed, seed-independent subset of the train set with the cardinality of
// the test set, used to estimate training-set performance in evaluation mode.
struct Dataset {
  std::string name;
  TensorF train_inputs;
  TensorF test_inputs;
  std::vector<std::int32_t> train_labels;
  std::vector<std::int32_t> test_labels;
  std::vector<std::int64_t> train_eval_indices;
  int num_classes = 0;

  std::int64_t train_size() const {
    return train_inputs.shape.rank() ? train_inputs.shape[0] : 0;
  }
  std::int64_t test_size() const {
    return test_inputs.shape.rank() ? test_inputs.shape[0] : 0;
  }
};

// One training epoch = one pass over a seeded permutation of the train set in
// fixed-size batches, ragged tail dropped. The permutation for epoch e is a
// pure function of (epoch_seed, e).
struct BatchStream {
  const Dataset* dataset = nullptr;
  int batch_size = 0;
  std::uint64_t epoch_seed = 0;
};

std::vector<std::vector<std::int64_t>> batches(const BatchStream& stream, int epoch);

// Unshuffled view over the train-eval subset.
std::span<const std::int64_t> train_eval_view(const Dataset& ds);

// The fixed seed-42 permutation prefix backing train_eval_indices.
std::vector<std::int64_t> make_train_eval_indices(std::int64_t n_train,
                                                  std::int64_t n_test);

// IDX (big-endian header) parser. Images (rank >= 2) are scaled to [0,1];
// rank-1 payloads (labels) keep their raw values.
TensorF parse_idx(std::span<const std::uint8_t> bytes);

// CIFAR binary records: 1 label byte + 3072 channel-major pixel bytes.
// Images come back as [N,32,32,3] scaled to [0,1]; standardization happens at
// dataset assembly where the training-set constants are known.
std::pair<TensorF, std::vector<std::int32_t>> parse_cifar(
    std::span<const std::uint8_t> bytes);

struct QuadraticSpec {
  int dimension = 100;
  double low_fraction = 0.9;  // eigenvalues drawn from [0,1]
  double low_lo = 0.0, low_hi = 1.0;
  double high_lo = 30.0, high_hi = 60.0;
  std::uint64_t hessian_seed = 42;
};

// 1000/1000 train/test samples x ~ N(0, I) in R^dimension, from two distinct
// RNG streams of split_seed.
Dataset synthetic_quadratic(const QuadraticSpec& spec, std::uint64_t split_seed);

// 1000/1000 train/test 2-vectors ~ N(0, sigma^2 I): the evaluation-point
// perturbations shared by all noisy 2D problems.
Dataset synthetic_two_d(double sigma, std::uint64_t split_seed);

inline constexpr double kTwoDNoiseSigma = 0.2;
inline constexpr std::uint64_t kSyntheticDataSeed = 42;

// Loads a dataset from the cache (or generates it for synthetic ids).
// Valid ids: mnist, fmnist, cifar10, quadratic, two_d.
Dataset load_dataset(const std::string& id, const std::filesystem::path& cache_dir);

const std::vector<std::string>& dataset_ids();

// Copies the rows of a dataset split selected by `indices` into a batch,
// casting to the requested scalar type.
template <typename T>
struct Batch {
  Tensor<T> inputs;
  std::vector<std::int32_t> labels;
};

template <typename T>
Batch<T> gather(const Dataset& ds, std::span<const std::int64_t> indices, bool train) {
  const TensorF& src = train ? ds.train_inputs : ds.test_inputs;
  const std::vector<std::int32_t>& lab = train ? ds.train_labels : ds.test_labels;
  std::int64_t n = train ? ds.train_size() : ds.test_size();
  std::int64_t row = n > 0 ? src.numel() / n : 0;
  std::vector<int> dims = src.shape.dims();
  dims[0] = static_cast<int>(indices.size());
  Batch<T> out;
  out.inputs = Tensor<T>::zeros(Shape(dims));
  out.labels.reserve(lab.empty() ? 0 : indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    const float* s = src.values.data() + indices[i] * row;
    T* d = out.inputs.values.data() + static_cast<std::int64_t>(i) * row;
    for (std::int64_t j = 0; j < row; ++j) d[j] = static_cast<T>(s[j]);
    if (!lab.empty()) out.labels.push_back(lab[static_cast<size_t>(indices[i])]);
  }
  return out;
}

}  // namespace optbench
