// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#include "dagger/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "dagger/error.hpp"

namespace dagger {

namespace fs = std::filesystem;

Shape Dataset::sample_shape() const {
  const Shape& s = images.shape();
  return Shape(s.begin() + 1, s.end());
}

void gather_batch(const Dataset& data, std::span<const int> indices, Tensor& images, std::vector<int>& labels) {
  Shape shape = data.images.shape();
  shape[0] = static_cast<int>(indices.size());
  const std::size_t per = data.images.numel() / static_cast<std::size_t>(data.size());
  if (images.shape() != shape) images = Tensor(shape);
  labels.resize(indices.size());
  const auto src = data.images.data();
  auto dst = images.data();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto i = static_cast<std::size_t>(indices[b]);
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * per), per,
                dst.begin() + static_cast<std::ptrdiff_t>(b * per));
    labels[b] = data.labels[i];
  }
}

BatchStream::BatchStream(const Dataset& data, int batch_size, std::uint64_t seed)
    : data_(&data), batch_(std::min(batch_size, data.size())), rng_(seed) {
  if (data.size() == 0) throw DataError("empty dataset");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
}

void BatchStream::next(Tensor& images, std::vector<int>& labels) {
  if (order_.empty() || pos_ + static_cast<std::size_t>(batch_) > order_.size()) {
    order_ = rng_.permutation(data_->size());
    pos_ = 0;
  }
  gather_batch(*data_, std::span<const int>(order_).subspan(pos_, static_cast<std::size_t>(batch_)), images, labels);
  pos_ += static_cast<std::size_t>(batch_);
}

// ---------------------------------------------------------------------------
// CIFAR-10

namespace {

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed for " + path);
}

constexpr std::array<double, 3> kCifarMean{0.4914, 0.4822, 0.4465};
constexpr std::array<double, 3> kCifarStd{0.2470, 0.2435, 0.2616};

}  // namespace

std::vector<CifarRecord> read_cifar10_records(const std::string& path, int limit) {
  const auto bytes = read_bytes(path);
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw DataError(path + ": size " + std::to_string(bytes.size()) + " is not a multiple of " +
                    std::to_string(kCifarRecordBytes) + " (truncated file?)");
  }
  std::size_t n = bytes.size() / kCifarRecordBytes;
  if (limit > 0) n = std::min(n, static_cast<std::size_t>(limit));
  std::vector<CifarRecord> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw DataError(path + ": record " + std::to_string(r) + " has label " + std::to_string(rec[0]) + " > 9");
    }
    out[r].label = rec[0];
    std::copy_n(rec + 1, out[r].pixels.size(), out[r].pixels.begin());
  }
  return out;
}

void write_cifar10_records(const std::string& path, std::span<const CifarRecord> records) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(records.size() * kCifarRecordBytes);
  for (const CifarRecord& r : records) {
    bytes.push_back(r.label);
    bytes.insert(bytes.end(), r.pixels.begin(), r.pixels.end());
  }
  write_bytes(path, bytes);
}

Dataset load_cifar10_binary(const std::string& path, const std::string& split, int limit) {
  std::vector<std::string> files;
  if (fs::is_directory(path)) {
    if (split == "train") {
      for (int b = 1; b <= 5; ++b) {
        const fs::path p = fs::path(path) / ("data_batch_" + std::to_string(b) + ".bin");
        if (fs::exists(p)) files.push_back(p.string());
      }
    } else if (split == "test") {
      files.push_back((fs::path(path) / "test_batch.bin").string());
    } else {
      throw ConfigError("unknown split '" + split + "' (expected train or test)");
    }
    if (files.empty()) throw DataError(path + ": no CIFAR-10 " + split + " batches found");
  } else {
    files.push_back(path);
  }
  std::vector<CifarRecord> records;
  for (const std::string& f : files) {
    const int remaining = limit > 0 ? limit - static_cast<int>(records.size()) : 0;
    if (limit > 0 && remaining <= 0) break;
    auto part = read_cifar10_records(f, remaining);
    records.insert(records.end(), part.begin(), part.end());
  }
  Dataset d;
  d.classes = 10;
  d.mean.assign(kCifarMean.begin(), kCifarMean.end());
  d.stddev.assign(kCifarStd.begin(), kCifarStd.end());
  const int n = static_cast<int>(records.size());
  if (n == 0) throw DataError(path + ": no records");
  d.images = Tensor({n, 3, 32, 32});
  d.labels.resize(records.size());
  auto dst = d.images.data();
  for (std::size_t r = 0; r < records.size(); ++r) {
    d.labels[r] = records[r].label;
    for (std::size_t p = 0; p < 3072; ++p) {
      const std::size_t c = p / 1024;
      dst[r * 3072 + p] = (records[r].pixels[p] / 255.0 - d.mean[c]) / d.stddev[c];
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// IDX

IdxArray load_idx(const std::string& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() < 4) throw DataError(path + ": file too short for an IDX header");
  if (bytes[0] != 0 || bytes[1] != 0) throw DataError(path + ": bad IDX magic at offset 0");
  if (bytes[2] != 0x08) {
    throw DataError(path + ": unsupported IDX element type 0x" + std::to_string(bytes[2]) + " (only 0x08 ubyte)");
  }
  const int ndims = bytes[3];
  if (ndims < 1) throw DataError(path + ": IDX file declares no dimensions");
  const std::size_t header = 4 + 4 * static_cast<std::size_t>(ndims);
  if (bytes.size() < header) throw DataError(path + ": truncated IDX dimension table");
  IdxArray a;
  std::uint64_t total = 1;
  for (int d = 0; d < ndims; ++d) {
    const std::uint8_t* p = bytes.data() + 4 + 4 * d;
    const std::uint32_t v = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
    if (v == 0 || v > 0x7fffffffU) throw DataError(path + ": IDX dimension " + std::to_string(d) + " out of range");
    total *= v;
    if (total > (std::uint64_t{1} << 34)) throw DataError(path + ": IDX dimensions overflow");
    a.dims.push_back(static_cast<int>(v));
  }
  if (bytes.size() - header != total) {
    throw DataError(path + ": IDX payload has " + std::to_string(bytes.size() - header) + " bytes, expected " +
                    std::to_string(total));
  }
  a.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return a;
}

void write_idx(const std::string& path, const IdxArray& array) {
  std::uint64_t total = 1;
  for (int d : array.dims) total *= static_cast<std::uint64_t>(d);
  if (array.dims.empty() || array.dims.size() > 255 || total != array.data.size()) {
    throw DataError("write_idx: dims do not match payload size");
  }
  std::vector<std::uint8_t> bytes{0, 0, 0x08, static_cast<std::uint8_t>(array.dims.size())};
  for (int d : array.dims) {
    const auto v = static_cast<std::uint32_t>(d);
    bytes.insert(bytes.end(), {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
                               static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)});
  }
  bytes.insert(bytes.end(), array.data.begin(), array.data.end());
  write_bytes(path, bytes);
}

Tensor idx_to_tensor(const IdxArray& array) {
  std::vector<double> v(array.data.begin(), array.data.end());
  return Tensor(Shape(array.dims.begin(), array.dims.end()), std::move(v));
}

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
  const IdxArray img = load_idx(images_path);
  const IdxArray lab = load_idx(labels_path);
  if (lab.dims.size() != 1) throw DataError(labels_path + ": labels must be one-dimensional");
  if (img.dims.size() != 3 && img.dims.size() != 4) throw DataError(images_path + ": images must be NxHxW or NxCxHxW");
  if (img.dims[0] != lab.dims[0]) {
    throw DataError("image count " + std::to_string(img.dims[0]) + " != label count " + std::to_string(lab.dims[0]));
  }
  Shape shape(img.dims.begin(), img.dims.end());
  if (shape.size() == 3) shape.insert(shape.begin() + 1, 1);
  Dataset d;
  d.images = Tensor(shape);
  const int n = shape[0], c = shape[1];
  const std::size_t plane = static_cast<std::size_t>(shape[2]) * shape[3];
  d.mean.assign(static_cast<std::size_t>(c), 0.0);
  d.stddev.assign(static_cast<std::size_t>(c), 0.0);
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i)
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = img.data[(static_cast<std::size_t>(i) * c + ch) * plane + p] / 255.0;
        s += v;
        s2 += v * v;
      }
    const double cnt = static_cast<double>(n) * static_cast<double>(plane);
    d.mean[static_cast<std::size_t>(ch)] = s / cnt;
    const double var = s2 / cnt - (s / cnt) * (s / cnt);
    d.stddev[static_cast<std::size_t>(ch)] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  auto dst = d.images.data();
  for (std::size_t k = 0; k < img.data.size(); ++k) {
    const std::size_t ch = (k / plane) % static_cast<std::size_t>(c);
    dst[k] = (img.data[k] / 255.0 - d.mean[ch]) / d.stddev[ch];
  }
  int max_label = 0;
  d.labels.resize(lab.data.size());
  for (std::size_t i = 0; i < lab.data.size(); ++i) {
    d.labels[i] = lab.data[i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.classes = max_label + 1;
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic

namespace {

void box_blur(std::vector<double>& img, int c, int h, int w) {
  std::vector<double> out(img.size());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            s += img[(static_cast<std::size_t>(ch) * h + yy) * w + xx];
            ++cnt;
          }
        out[(static_cast<std::size_t>(ch) * h + y) * w + x] = s / cnt;
      }
  img.swap(out);
}

void standardize(std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  const double sd = std::sqrt(var / static_cast<double>(v.size()));
  for (double& x : v) x = sd > 0 ? (x - m) / sd : 0.0;
}

}  // namespace

Dataset synthetic_dataset(const SyntheticSpec& spec, std::uint64_t stream) {
  if (spec.classes < 1 || spec.per_class < 0 || spec.image_shape.size() != 3 || spec.noise < 0) {
    throw ConfigError("synthetic dataset: invalid parameters");
  }
  const std::size_t per = shape_numel(spec.image_shape);
  const int c = spec.image_shape[0], h = spec.image_shape[1], w = spec.image_shape[2];
  Rng proto_rng(spec.seed);
  std::vector<std::vector<double>> protos(static_cast<std::size_t>(spec.classes));
  for (auto& p : protos) {
    p.resize(per);
    for (double& v : p) v = proto_rng.normal();
    for (int s = 0; s < spec.smooth; ++s) box_blur(p, c, h, w);
    standardize(p);
  }
  Dataset d;
  d.classes = spec.classes;
  d.mean.assign(static_cast<std::size_t>(c), 0.0);
  d.stddev.assign(static_cast<std::size_t>(c), 1.0);
  const int n = spec.classes * spec.per_class;
  d.labels.resize(static_cast<std::size_t>(n));
  if (n == 0) return d;
  d.images = Tensor({n, c, h, w});
  Rng rng = Rng(spec.seed ^ 0x9e3779b97f4a7c15ULL).split();
  for (std::uint64_t s = 0; s < stream; ++s) rng = rng.split();
  auto dst = d.images.data();
  for (int i = 0; i < n; ++i) {
    const int k = i % spec.classes;
    d.labels[static_cast<std::size_t>(i)] = k;
    const auto& p = protos[static_cast<std::size_t>(k)];
    for (std::size_t j = 0; j < per; ++j) dst[static_cast<std::size_t>(i) * per + j] = p[j] + spec.noise * rng.normal();
  }
  return d;
}

}  // namespace dagger
