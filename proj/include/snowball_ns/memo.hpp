#pragma once

/// \file
/// Write-once store of walk results keyed by the exact bit pattern of the
/// likelihood threshold at which they were produced.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "snowball_ns/lrps.hpp"
#include "snowball_ns/numeric.hpp"

namespace snowball_ns {

struct MemoKey {
  std::uint64_t lmin_bits = 0;

  static MemoKey from(double l_min) noexcept { return MemoKey{double_bits(l_min)}; }
  double l_min() const noexcept { return bits_double(lmin_bits); }

  friend auto operator<=>(const MemoKey&, const MemoKey&) = default;
};

class MemoTable {
 public:
  using Entries = std::map<MemoKey, WalkResult>;

  /// Exact-match lookup. Counts a hit or a miss.
  std::optional<WalkResult> lookup(double l_min) {
    const auto it = entries_.find(MemoKey::from(l_min));
    if (it == entries_.end()) {
      ++n_misses_;
      return std::nullopt;
    }
    ++n_hits_;
    return it->second;
  }

  /// Stores `result` unless the key already exists (first result wins).
  /// A result below the threshold is a sampler bug. Equality only arises on
  /// likelihood plateaus, where the tie-break order still ranks it above.
  void put(double l_min, const WalkResult& result) {
    if (!std::isfinite(l_min)) throw DomainError("memo_put: threshold must be finite");
    if (!(result.point.logl >= l_min)) {
      throw InvariantError("memo_put: stored point lies below its threshold");
    }
    entries_.try_emplace(MemoKey::from(l_min), result);
  }

  bool contains(double l_min) const { return entries_.contains(MemoKey::from(l_min)); }

  const Entries& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::uint64_t n_hits() const noexcept { return n_hits_; }
  std::uint64_t n_misses() const noexcept { return n_misses_; }

  /// Rebuilds a table from persisted contents.
  static MemoTable restore(Entries entries, std::uint64_t n_hits, std::uint64_t n_misses) {
    MemoTable t;
    t.entries_ = std::move(entries);
    t.n_hits_ = n_hits;
    t.n_misses_ = n_misses;
    return t;
  }

 private:
  Entries entries_;
  std::uint64_t n_hits_ = 0;
  std::uint64_t n_misses_ = 0;
};

}  // namespace snowball_ns
