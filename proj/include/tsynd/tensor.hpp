#pragma once

#include <iosfwd>
#include <memory>
#include <span>

#include "tsynd/common.hpp"

namespace tsynd {

// Dense row-major f32 tensor. Storage is immutable after construction and
// shared between copies, so copying a Tensor is O(1) and sharing across
// threads is safe.
class Tensor {
 public:
  Tensor() = default;

  // Validates extents and rejects NaN/Inf payloads.
  static Tensor from_data(Dims dims, std::vector<float> data);
  // Same layout checks but admits non-finite values (gradient-debug tensors).
  static Tensor from_data_unchecked(Dims dims, std::vector<float> data);
  static Tensor zeros(Dims dims);
  static Tensor full(Dims dims, float value);
  static Tensor scalar(float value) { return full({1}, value); }

  const Dims& dims() const { return dims_; }
  std::int64_t size() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
  bool empty() const { return !data_; }

  std::span<const float> data() const {
    return data_ ? std::span<const float>(*data_) : std::span<const float>();
  }
  float operator[](std::int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

  bool same_dims(const Tensor& other) const { return dims_ == other.dims_; }
  // Same extents and bit-identical payload.
  bool bit_equal(const Tensor& other) const;

  // Metadata-only reinterpretation; shares storage. Element count must match.
  Tensor reshaped(Dims new_dims) const;

  bool all_finite() const;

 private:
  Tensor(Dims dims, std::shared_ptr<const std::vector<float>> data)
      : dims_(std::move(dims)), data_(std::move(data)) {}

  Dims dims_;
  std::shared_ptr<const std::vector<float>> data_;
};

// Elementwise helpers used outside the autodiff graph (perturbations,
// optimizer math, image post-processing).
Tensor clamp(const Tensor& t, float lo, float hi);
Tensor sign(const Tensor& t);
Tensor add_scaled(const Tensor& a, const Tensor& b, float scale);  // a + scale*b
Tensor abs_diff(const Tensor& a, const Tensor& b);
double sum_f64(const Tensor& t);
double mean_f64(const Tensor& t);
double l2_norm(const Tensor& t);
double l2_diff(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& t);
int argmax(const Tensor& t);

// Bilinear resize of an H×W map (used by class-activation heatmaps).
Tensor bilinear_resize(const Tensor& map, int out_h, int out_w);

// FNV-1a over dims and raw f32 bit patterns; order-sensitive.
std::uint64_t content_hash(const Tensor& t, std::uint64_t seed = 0xcbf29ce484222325ULL);

// Binary tensor container: "TSYD", version 0x01, dtype 0x01 (f32), ndim byte,
// ndim little-endian u32 extents, row-major little-endian f32 payload.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace tsynd
