#include "tsynd/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace tsynd {

namespace {

void check_dims(const Dims& dims) {
  if (dims.empty()) throw ShapeError("tensor needs at least one extent");
  for (int e : dims) {
    if (e <= 0) throw ShapeError("non-positive extent in " + dims_to_string(dims));
  }
}

}  // namespace

Tensor Tensor::from_data_unchecked(Dims dims, std::vector<float> data) {
  check_dims(dims);
  if (dims_product(dims) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("payload length " + std::to_string(data.size()) +
                     " does not match extents " + dims_to_string(dims));
  }
  return Tensor(std::move(dims),
                std::make_shared<const std::vector<float>>(std::move(data)));
}

Tensor Tensor::from_data(Dims dims, std::vector<float> data) {
  for (float v : data) {
    if (!std::isfinite(v)) throw ValueError("non-finite element in tensor payload");
  }
  return from_data_unchecked(std::move(dims), std::move(data));
}

Tensor Tensor::zeros(Dims dims) {
  check_dims(dims);
  auto n = static_cast<size_t>(dims_product(dims));
  return Tensor(std::move(dims),
                std::make_shared<const std::vector<float>>(n, 0.f));
}

Tensor Tensor::full(Dims dims, float value) {
  check_dims(dims);
  if (!std::isfinite(value)) throw ValueError("non-finite fill value");
  auto n = static_cast<size_t>(dims_product(dims));
  return Tensor(std::move(dims),
                std::make_shared<const std::vector<float>>(n, value));
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (dims_ != other.dims_) return false;
  if (!data_ && !other.data_) return true;
  if (!data_ || !other.data_) return false;
  return std::memcmp(data_->data(), other.data_->data(),
                     data_->size() * sizeof(float)) == 0;
}

Tensor Tensor::reshaped(Dims new_dims) const {
  check_dims(new_dims);
  if (dims_product(new_dims) != size()) {
    throw ShapeError("reshape " + dims_to_string(dims_) + " -> " +
                     dims_to_string(new_dims) + " changes element count");
  }
  return Tensor(std::move(new_dims), data_);
}

bool Tensor::all_finite() const {
  if (!data_) return true;
  for (float v : *data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor clamp(const Tensor& t, float lo, float hi) {
  std::vector<float> out(t.data().begin(), t.data().end());
  for (float& v : out) v = std::min(hi, std::max(lo, v));
  return Tensor::from_data_unchecked(t.dims(), std::move(out));
}

Tensor sign(const Tensor& t) {
  std::vector<float> out(static_cast<size_t>(t.size()));
  auto src = t.data();
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = src[i] > 0.f ? 1.f : (src[i] < 0.f ? -1.f : 0.f);
  }
  return Tensor::from_data_unchecked(t.dims(), std::move(out));
}

Tensor add_scaled(const Tensor& a, const Tensor& b, float scale) {
  if (!a.same_dims(b)) {
    throw ShapeError("add_scaled operands " + dims_to_string(a.dims()) + " vs " +
                     dims_to_string(b.dims()));
  }
  std::vector<float> out(static_cast<size_t>(a.size()));
  auto pa = a.data();
  auto pb = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + scale * pb[i];
  return Tensor::from_data_unchecked(a.dims(), std::move(out));
}

Tensor abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_dims(b)) {
    throw ShapeError("abs_diff operands " + dims_to_string(a.dims()) + " vs " +
                     dims_to_string(b.dims()));
  }
  std::vector<float> out(static_cast<size_t>(a.size()));
  auto pa = a.data();
  auto pb = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(pa[i] - pb[i]);
  return Tensor::from_data_unchecked(a.dims(), std::move(out));
}

double sum_f64(const Tensor& t) {
  double acc = 0.0;
  for (float v : t.data()) acc += v;
  return acc;
}

double mean_f64(const Tensor& t) {
  return t.size() ? sum_f64(t) / static_cast<double>(t.size()) : 0.0;
}

double l2_norm(const Tensor& t) {
  double acc = 0.0;
  for (float v : t.data()) acc += static_cast<double>(v) * v;
  return std::sqrt(acc);
}

double l2_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_dims(b)) {
    throw ShapeError("l2_diff operands " + dims_to_string(a.dims()) + " vs " +
                     dims_to_string(b.dims()));
  }
  double acc = 0.0;
  auto pa = a.data();
  auto pb = b.data();
  for (std::int64_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(pa[i]) - pb[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (float v : t.data()) m = std::max(m, static_cast<double>(std::fabs(v)));
  return m;
}

int argmax(const Tensor& t) {
  if (t.empty()) throw ValueError("argmax of empty tensor");
  auto d = t.data();
  int best = 0;
  for (std::int64_t i = 1; i < t.size(); ++i) {
    if (d[i] > d[best]) best = static_cast<int>(i);
  }
  return best;
}

Tensor bilinear_resize(const Tensor& map, int out_h, int out_w) {
  if (map.dims().size() != 2) throw ShapeError("bilinear_resize expects an HxW map");
  const int h = map.dims()[0];
  const int w = map.dims()[1];
  auto src = map.data();
  std::vector<float> out(static_cast<size_t>(out_h) * out_w);
  const double sy = out_h > 1 ? static_cast<double>(h - 1) / (out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(w - 1) / (out_w - 1) : 0.0;
  for (int y = 0; y < out_h; ++y) {
    double fy = y * sy;
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, h - 1);
    double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = x * sx;
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, w - 1);
      double wx = fx - x0;
      double v = (1 - wy) * ((1 - wx) * src[y0 * w + x0] + wx * src[y0 * w + x1]) +
                 wy * ((1 - wx) * src[y1 * w + x0] + wx * src[y1 * w + x1]);
      out[static_cast<size_t>(y) * out_w + x] = static_cast<float>(v);
    }
  }
  return Tensor::from_data_unchecked({out_h, out_w}, std::move(out));
}

std::uint64_t content_hash(const Tensor& t, std::uint64_t seed) {
  constexpr std::uint64_t kPrime = 0x100000001b3ULL;
  std::uint64_t h = seed;
  auto mix_bytes = [&](const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= kPrime;
    }
  };
  for (int e : t.dims()) {
    std::uint32_t u = static_cast<std::uint32_t>(e);
    mix_bytes(&u, sizeof(u));
  }
  auto d = t.data();
  if (!d.empty()) mix_bytes(d.data(), d.size() * sizeof(float));
  return h;
}

namespace {

constexpr char kMagic[4] = {'T', 'S', 'Y', 'D'};
constexpr unsigned char kVersion = 0x01;
constexpr unsigned char kDtypeF32 = 0x01;

void write_u32_le(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("truncated tensor record");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  if (t.empty()) throw ValueError("cannot serialize an empty tensor");
  out.write(kMagic, 4);
  out.put(static_cast<char>(kVersion));
  out.put(static_cast<char>(kDtypeF32));
  out.put(static_cast<char>(t.dims().size()));
  for (int e : t.dims()) write_u32_le(out, static_cast<std::uint32_t>(e));
  static_assert(std::endian::native == std::endian::little,
                "payload is written little-endian via memcpy");
  auto d = t.data();
  out.write(reinterpret_cast<const char*>(d.data()),
            static_cast<std::streamsize>(d.size() * sizeof(float)));
  if (!out) throw IoError("tensor write failed");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("bad tensor magic");
  }
  int version = in.get();
  if (version != kVersion) throw FormatError("unsupported tensor version");
  int dtype = in.get();
  if (dtype != kDtypeF32) throw FormatError("unsupported tensor dtype");
  int ndim = in.get();
  if (ndim <= 0 || ndim > 8 || !in) throw FormatError("bad tensor rank");
  Dims dims(static_cast<size_t>(ndim));
  for (int& e : dims) {
    std::uint32_t u = read_u32_le(in);
    if (u == 0 || u > (1u << 28)) throw FormatError("bad tensor extent");
    e = static_cast<int>(u);
  }
  std::vector<float> data(static_cast<size_t>(dims_product(dims)));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!in) throw FormatError("truncated tensor payload");
  return Tensor::from_data_unchecked(std::move(dims), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  write_tensor(f, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return read_tensor(f);
}

}  // namespace tsynd
