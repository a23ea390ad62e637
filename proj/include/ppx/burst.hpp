#pragma once

#include <map>
#include <string>
#include <vector>

#include "ppx/grid.hpp"

namespace ppx {

/// Frames keyed by signed index relative to the reference (index 0).
/// Masks are optional; a frame without one is valid everywhere.
struct Burst {
  std::map<int, Image> frames;
  std::map<int, Mask> masks;

  bool has(int index) const { return frames.count(index) != 0; }

  const Image& frame(int index) const {
    const auto it = frames.find(index);
    if (it == frames.end()) throw ContractViolation("burst has no frame " + std::to_string(index));
    return it->second;
  }

  const Image& reference() const { return frame(0); }

  const Mask* mask(int index) const {
    const auto it = masks.find(index);
    return it == masks.end() ? nullptr : &it->second;
  }

  std::vector<int> indices() const {
    std::vector<int> out;
    for (const auto& [i, f] : frames) out.push_back(i);
    return out;
  }

  std::size_t size() const { return frames.size(); }
  int width() const { return reference().width(); }
  int height() const { return reference().height(); }

  /// Throws unless the reference exists and every frame and mask shares its size.
  void validate() const {
    const Image& ref = reference();
    for (const auto& [i, f] : frames) require_same_shape(ref, f, ("burst frame " + std::to_string(i)).c_str());
    for (const auto& [i, m] : masks) {
      if (!has(i)) throw ContractViolation("mask for missing frame " + std::to_string(i));
      require_same_shape(ref, m, ("burst mask " + std::to_string(i)).c_str());
    }
  }
};

}  // namespace ppx
