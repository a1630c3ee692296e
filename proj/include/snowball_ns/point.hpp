#pragma once

#include <cstdint>
#include <vector>

namespace snowball_ns {

using OriginId = std::uint64_t;

/// Origin ids below this value belong to initial prior draws (id == draw
/// index); ids at or above it belong to fresh MCMC walks (offset + walk
/// index). Walk ids therefore exceed every id that existed before the walk.
inline constexpr OriginId kWalkIdOffset = OriginId{1} << 40;

struct Point {
  std::vector<double> u;      ///< unit-cube coordinates
  std::vector<double> theta;  ///< physical coordinates
  double logl = 0.0;
  OriginId origin_id = 0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// Total order used to pick the worst live point: likelihood first, then
/// lower origin id dies first.
inline bool ranks_below(const Point& a, const Point& b) noexcept {
  if (a.logl != b.logl) return a.logl < b.logl;
  return a.origin_id < b.origin_id;
}

/// The likelihood constraint of one replacement step.
struct Threshold {
  double logl;
  OriginId origin_id;  ///< id of the discarded point; breaks exact ties

  /// True iff a point with this likelihood and id ranks above the threshold.
  bool admits(double candidate_logl, OriginId candidate_id) const noexcept {
    if (candidate_logl != logl) return candidate_logl > logl;
    return candidate_id > origin_id;
  }
};

}  // namespace snowball_ns
