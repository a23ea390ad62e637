#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ppx {

// ---------------------------------------------------------------------------
// Error hierarchy. The CLI maps these onto exit codes: I/O and format
// problems are 1, numerical failures are 2.

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

/// Raised when a caller breaks a documented precondition (mismatched sizes,
/// missing frames, out-of-range parameters).
struct ContractViolation : Error {
  using Error::Error;
};

struct NumericalError : Error {
  using Error::Error;
};

struct SolverDivergence : NumericalError {
  using NumericalError::NumericalError;
};

struct UnderdeterminedSystem : NumericalError {
  using NumericalError::NumericalError;
};

struct MetricError : NumericalError {
  using NumericalError::NumericalError;
};

/// Raised by the synthetic generator when a scene violates the small-motion
/// model.
struct SpecError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------

/// Dense row-major 2D grid.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(int width, int height, T fill = T{}) : width_(width), height_(height) {
    if (width < 1 || height < 1) {
      throw ContractViolation("grid dimensions must be positive, got " +
                              std::to_string(width) + "x" +
                              std::to_string(height));
    }
    data_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> row(int y) {
    return {data_.data() + static_cast<std::size_t>(y) * width_,
            static_cast<std::size_t>(width_)};
  }
  std::span<const T> row(int y) const {
    return {data_.data() + static_cast<std::size_t>(y) * width_,
            static_cast<std::size_t>(width_)};
  }

  std::span<T> samples() { return data_; }
  std::span<const T> samples() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  bool same_shape(const Grid<U>& other) const {
    return width_ == other.width() && height_ == other.height();
  }

  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.data_ == b.data_;
  }

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

/// Single-channel image, intensities on the [0, 255] float convention.
using Image = Grid<float>;
/// Per-pixel validity; nonzero means valid.
using Mask = Grid<std::uint8_t>;

template <typename To, typename From>
Grid<To> grid_cast(const Grid<From>& in) {
  Grid<To> out(in.width(), in.height());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<To>(in[i]);
  return out;
}

template <typename T>
bool all_finite(const Grid<T>& g) {
  return std::all_of(g.samples().begin(), g.samples().end(),
                     [](T v) { return std::isfinite(static_cast<double>(v)); });
}

inline Mask full_mask(int width, int height) { return Mask(width, height, 1); }

inline std::size_t count_valid(const Mask& m) {
  return static_cast<std::size_t>(
      std::count_if(m.samples().begin(), m.samples().end(),
                    [](std::uint8_t v) { return v != 0; }));
}

/// Two-channel displacement field: a pixel x corresponds to x + (u, v).
template <typename T>
struct BasicFlowField {
  Grid<T> u;
  Grid<T> v;

  BasicFlowField() = default;
  BasicFlowField(int width, int height) : u(width, height), v(width, height) {}
  BasicFlowField(Grid<T> u_, Grid<T> v_) : u(std::move(u_)), v(std::move(v_)) {
    if (!u.same_shape(v)) {
      throw ContractViolation("flow components differ in size");
    }
  }

  int width() const { return u.width(); }
  int height() const { return u.height(); }
  std::size_t size() const { return u.size(); }
  bool empty() const { return u.empty(); }

  template <typename G>
  bool same_shape(const G& g) const {
    return u.width() == g.width() && u.height() == g.height();
  }

  friend bool operator==(const BasicFlowField& a, const BasicFlowField& b) {
    return a.u == b.u && a.v == b.v;
  }
};

using FlowField = BasicFlowField<float>;
using FlowFieldD = BasicFlowField<double>;

template <typename To, typename From>
BasicFlowField<To> flow_cast(const BasicFlowField<From>& f) {
  return {grid_cast<To>(f.u), grid_cast<To>(f.v)};
}

template <typename T>
bool all_finite(const BasicFlowField<T>& f) {
  return all_finite(f.u) && all_finite(f.v);
}

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw ContractViolation(std::string(what) + ": dimension mismatch (" +
                            std::to_string(a.width()) + "x" +
                            std::to_string(a.height()) + " vs " +
                            std::to_string(b.width()) + "x" +
                            std::to_string(b.height()) + ")");
  }
}

}  // namespace ppx
