#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsynd {

// Extents of a dense row-major tensor, outermost first.
using Dims = std::vector<int>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand/extent mismatches and invalid layer geometry.
struct ShapeError : Error {
  using Error::Error;
};

// Bad numeric arguments: non-finite construction, invalid distributions,
// K=0, odd batch where even is required, log of non-positive values.
struct ValueError : Error {
  using Error::Error;
};

// On-disk format violations (TSYD/TSCK/IDX/CSV/JSON config).
struct FormatError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

inline std::string dims_to_string(const Dims& d) {
  std::string s = "[";
  for (size_t i = 0; i < d.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(d[i]);
  }
  return s + "]";
}

inline std::int64_t dims_product(const Dims& d) {
  std::int64_t n = 1;
  for (int e : d) n *= e;
  return n;
}

}  // namespace tsynd
