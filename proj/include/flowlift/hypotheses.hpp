#pragma once

#include <cstdint>
#include <vector>

#include "flowlift/geometry.hpp"

namespace flowlift {

enum class Provenance : std::uint8_t { kOriginal = 0, kFlipped = 1 };

/// Candidate 3D poses sampled for one 2D observation.
struct HypothesisSet {
  std::vector<Pose3D> poses;
  std::vector<Provenance> provenance;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return poses.size(); }
  /// Throws unless non-empty, all poses share a joint count, provenance is
  /// aligned with poses and every coordinate is finite.
  void validate() const;
};

}  // namespace flowlift
