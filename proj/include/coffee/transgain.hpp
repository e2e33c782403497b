#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "coffee/error.hpp"
#include "coffee/grid.hpp"

namespace coffee {

// Bit k set = level k present.
using LevelSet = std::uint32_t;

inline constexpr LevelSet level_bit(int k) { return LevelSet{1} << k; }
inline bool has_level(LevelSet s, int k) { return (s >> k) & 1u; }
inline int max_level(LevelSet s) { return s ? 31 - std::countl_zero(s) : -1; }

inline std::vector<int> levels_of(LevelSet s) {
  std::vector<int> out;
  for (int k = 0; k < 32; ++k)
    if (has_level(s, k)) out.push_back(k);
  return out;
}

inline LevelSet make_level_set(std::initializer_list<int> ks) {
  LevelSet s = 0;
  for (int k : ks) s |= level_bit(k);
  return s;
}

enum class TranscodePricing { kAwsTiers, kTdRatio };

// Per-minute transcoding tiers: SD, HD, 4K.
inline constexpr double kAwsSdPerMinute = 0.0113;
inline constexpr double kAwsHdPerMinute = 0.0225;
inline constexpr double kAws4kPerMinute = 0.045;
inline constexpr double kAwsDownloadPerGB = 0.09;

struct CostModel {
  double download_per_byte = kAwsDownloadPerGB / 1e9;
  std::vector<double> transcode_base;  // dollars per transcode to level k, before td_scale
  double td_scale = 1.0;

  double transcode(int k) const { return transcode_base.at(static_cast<std::size_t>(k)) * td_scale; }
  double download(double bytes) const { return bytes * download_per_byte; }
  // Transcode only when it is cheaper than downloading the level-r tile.
  bool transcode_cheaper(int r, double bytes) const { return transcode(r) < download(bytes); }

  void validate(int levels) const {
    if (download_per_byte < 0 || td_scale < 0) throw ConfigError("costs must be nonnegative");
    if (static_cast<int>(transcode_base.size()) != levels) throw ConfigError("need one transcoding price per level");
    for (double t : transcode_base)
      if (t < 0) throw ConfigError("costs must be nonnegative");
  }

  // Tier by level position: the top third 4K, the middle HD, the rest SD (6 levels: {0,1},{2,3},{4,5}).
  // Prices are per minute of one tile, prorated to the GoP duration.
  static CostModel aws(const TileGridSpec& grid, double td_scale = 1.0, double tile_share = 1.0) {
    CostModel c;
    c.td_scale = td_scale;
    const int m = grid.levels();
    for (int k = 0; k < m; ++k) {
      const int tier = (3 * k) / m;
      const double per_min = tier == 0 ? kAwsSdPerMinute : (tier == 1 ? kAwsHdPerMinute : kAws4kPerMinute);
      c.transcode_base.push_back(per_min * grid.gop_duration / 60.0 / tile_share);
    }
    return c;
  }

  // T_k = td * w(k) * B_c, so td is exactly the transcode-to-download price ratio for every level.
  static CostModel td_ratio(const TileGridSpec& grid, double td) {
    CostModel c;
    c.td_scale = td;
    for (int k = 0; k < grid.levels(); ++k) c.transcode_base.push_back(static_cast<double>(grid.size(k)) * c.download_per_byte);
    return c;
  }

  bool operator==(const CostModel&) const = default;
};

// Levels below the highest member that are not members themselves.
inline LevelSet covered_set(LevelSet levels) {
  const int pivot = max_level(levels);
  if (pivot <= 0) return 0;
  return (level_bit(pivot) - 1) & ~levels;
}

// Cached levels earn their full download saving; covered levels earn the clamped transcoding saving.
inline double total_gain(LevelSet levels, std::span<const double> p, const CostModel& cost, std::span<const double> w) {
  double g = 0.0;
  for (int j : levels_of(levels)) g += p[j] * w[j] * cost.download_per_byte;
  for (int k : levels_of(covered_set(levels)))
    g += std::max(p[k] * (w[k] * cost.download_per_byte - cost.transcode(k)), 0.0);
  return g;
}

inline double marginal_unit_gain_by_difference(int r, LevelSet cached, std::span<const double> p, const CostModel& cost,
                                               std::span<const double> w) {
  if (has_level(cached, r)) throw LevelAlreadyCached("level " + std::to_string(r) + " already cached");
  return (total_gain(cached | level_bit(r), p, cost, w) - total_gain(cached, p, cost, w)) / w[r];
}

// Closed forms of the gain difference, split on whether a higher level is already cached.
inline double marginal_unit_gain(int r, LevelSet cached, std::span<const double> p, const CostModel& cost,
                                 std::span<const double> w) {
  if (has_level(cached, r)) throw LevelAlreadyCached("level " + std::to_string(r) + " already cached");
  const double bc = cost.download_per_byte;
  const int pivot = max_level(cached);
  if (pivot > r) return p[r] * bc - std::max(p[r] * (bc - cost.transcode(r) / w[r]), 0.0);
  double extra = 0.0;
  for (int k = pivot + 1; k < r; ++k) extra += std::max(p[k] * (w[k] * bc - cost.transcode(k)), 0.0);
  return p[r] * bc + extra / w[r];
}

}  // namespace coffee
