// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#ifndef DAGGER_DATA_HPP
#define DAGGER_DATA_HPP

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dagger/rng.hpp"
#include "dagger/tensor.hpp"

namespace dagger {

/// Labelled image set held in memory as normalized NCHW doubles.
struct Dataset {
  Tensor images;  // [N, C, H, W]
  std::vector<int> labels;
  int classes = 0;
  /// Per-channel constants applied as (x - mean) / std.
  std::vector<double> mean;
  std::vector<double> stddev;

  int size() const { return static_cast<int>(labels.size()); }
  Shape sample_shape() const;
};

/// Copies samples `indices` into a batch.
void gather_batch(const Dataset& data, std::span<const int> indices, Tensor& images, std::vector<int>& labels);

/// Endless shuffled mini-batches. Each pass over the data uses a fresh
/// permutation from the seeded generator; a trailing partial batch is
/// dropped. Batches are clamped to the dataset size.
class BatchStream {
 public:
  BatchStream(const Dataset& data, int batch_size, std::uint64_t seed);
  void next(Tensor& images, std::vector<int>& labels);
  int batch_size() const { return batch_; }
  int batches_per_epoch() const { return data_->size() / batch_; }

 private:
  const Dataset* data_;
  int batch_;
  Rng rng_;
  std::vector<int> order_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches

inline constexpr std::size_t kCifarRecordBytes = 3073;

struct CifarRecord {
  std::uint8_t label = 0;
  std::array<std::uint8_t, 3072> pixels{};  // R, G, B planes of 32x32
};

/// Raw records of one batch file. `limit` > 0 stops after that many.
std::vector<CifarRecord> read_cifar10_records(const std::string& path, int limit = 0);
void write_cifar10_records(const std::string& path, std::span<const CifarRecord> records);

/// Loads a batch file, or the train (data_batch_1..5.bin) or test
/// (test_batch.bin) split of a directory. Pixels are scaled to [0,1] and
/// normalized with the usual CIFAR-10 channel statistics.
Dataset load_cifar10_binary(const std::string& path, const std::string& split, int limit = 0);

// ---------------------------------------------------------------------------
// IDX (unsigned byte payloads)

struct IdxArray {
  std::vector<int> dims;
  std::vector<std::uint8_t> data;
};

IdxArray load_idx(const std::string& path);
void write_idx(const std::string& path, const IdxArray& array);
/// Values as doubles with the IDX dims as shape.
Tensor idx_to_tensor(const IdxArray& array);
/// Pairs a [N,H,W] or [N,C,H,W] image file with a [N] label file; pixels
/// scaled to [0,1] and standardized with the set's own channel statistics.
Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path);

// ---------------------------------------------------------------------------
// Synthetic class-conditioned Gaussian patterns

struct SyntheticSpec {
  int classes = 10;
  int per_class = 100;
  Shape image_shape{3, 8, 8};
  std::uint64_t seed = 0;
  /// Noise standard deviation relative to the unit-variance prototypes.
  double noise = 1.0;
  /// Spatial smoothing passes applied to prototypes (0 = white).
  int smooth = 1;
};

/// Sample i of class k is prototype_k + noise * N(0,1) per pixel. The
/// prototypes depend only on `seed`; `stream` selects an independent sample
/// draw, so splits share prototypes but not samples.
Dataset synthetic_dataset(const SyntheticSpec& spec, std::uint64_t stream = 0);

}  // namespace dagger

#endif  // DAGGER_DATA_HPP
