#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "coffee/grid.hpp"

namespace coffee {

// A viewer is expected to download tile `tile` at wall time tau.
struct RequestForecast {
  ViewerId viewer = 0;
  TileKey tile;
  int level = 0;  // device level of the viewer
  double tau = 0.0;
  bool will_request = true;
  double weight = 1.0;
};

struct Impulse {
  double tau = 0.0;
  double weight = 1.0;
  ViewerId viewer = 0;
  int level = 0;
  bool operator==(const Impulse&) const = default;
};

inline std::optional<Impulse> per_user_score(const RequestForecast& f) {
  if (!f.will_request) return std::nullopt;
  return Impulse{f.tau, f.weight, f.viewer, f.level};
}

// Evaluation of a single impulse: nonzero only exactly at tau.
inline double impulse_at(const Impulse& i, double t) { return t == i.tau ? i.weight : 0.0; }

// Impulse offsets tau - t of every viewer that has not downloaded the tile yet (tau >= t).
inline std::vector<double> aggregate(std::span<const RequestForecast> forecasts, double t) {
  std::vector<double> offsets;
  for (const auto& f : forecasts)
    if (auto i = per_user_score(f); i && i->tau >= t) offsets.push_back(i->tau - t);
  std::sort(offsets.begin(), offsets.end());
  return offsets;
}

// Linear penalty T - (tau - t) inside [t, t + T], zero outside.
inline double penalty(double offset, double horizon) {
  return offset >= 0.0 && offset <= horizon ? horizon - offset : 0.0;
}

inline double final_score(std::span<const Impulse> impulses, double t, double horizon) {
  double s = 0.0;
  for (const auto& i : impulses) s += i.weight * penalty(i.tau - t, horizon);
  return s;
}

inline double final_score(std::span<const RequestForecast> forecasts, double t, double horizon) {
  double s = 0.0;
  for (const auto& f : forecasts)
    if (f.will_request) s += f.weight * penalty(f.tau - t, horizon);
  return s;
}

inline std::vector<double> popularity_by_level(std::span<const RequestForecast> forecasts, int levels, double t,
                                               double horizon) {
  std::vector<double> p(static_cast<std::size_t>(levels), 0.0);
  for (const auto& f : forecasts)
    if (f.will_request) p.at(static_cast<std::size_t>(f.level)) += f.weight * penalty(f.tau - t, horizon);
  return p;
}

struct TileImpulse {
  TileKey tile;
  int level = 0;
  double weight = 1.0;
};

// Live forecast state for a run. Each (viewer, segment) holds at most one forecast; a new one
// replaces the old and requesting the segment removes it.
class ScoreBoard {
 public:
  ScoreBoard(double horizon, int levels) : horizon_(horizon), levels_(levels) {}

  double horizon() const { return horizon_; }
  int levels() const { return levels_; }

  void update(ViewerId viewer, int segment, double tau, std::span<const TileImpulse> tiles) {
    remove(viewer, segment);
    auto& keys = by_viewer_[{viewer, segment}];
    for (const auto& ti : tiles) {
      if (!(ti.weight > 0.0)) continue;
      by_tile_[ti.tile].push_back({tau, ti.weight, viewer, ti.level});
      keys.push_back(ti.tile);
      dirty_.insert(ti.tile);
    }
  }

  void update(const RequestForecast& f) {
    const TileImpulse ti{f.tile, f.level, f.will_request ? f.weight : 0.0};
    update(f.viewer, f.tile.segment, f.tau, std::span<const TileImpulse>(&ti, 1));
  }

  // The viewer has requested the segment: its impulses there are spent.
  void consume(ViewerId viewer, int segment) { remove(viewer, segment); }

  void drop_before(int segment) {
    for (auto it = by_viewer_.begin(); it != by_viewer_.end();) {
      if (it->first.second < segment) it = by_viewer_.erase(it);
      else ++it;
    }
    for (auto it = by_tile_.begin(); it != by_tile_.end();) {
      if (it->first.segment < segment) it = by_tile_.erase(it);
      else ++it;
    }
  }

  std::span<const Impulse> impulses(const TileKey& tile) const {
    const auto it = by_tile_.find(tile);
    if (it == by_tile_.end()) return {};
    return it->second;
  }

  double final_score(const TileKey& tile, double t) const { return coffee::final_score(impulses(tile), t, horizon_); }

  double level_score(const TileKey& tile, int level, double t) const {
    double s = 0.0;
    for (const auto& i : impulses(tile))
      if (i.level == level) s += i.weight * penalty(i.tau - t, horizon_);
    return s;
  }

  std::vector<double> level_scores(const TileKey& tile, double t) const {
    std::vector<double> p(static_cast<std::size_t>(levels_), 0.0);
    for (const auto& i : impulses(tile)) p[static_cast<std::size_t>(i.level)] += i.weight * penalty(i.tau - t, horizon_);
    return p;
  }

  std::size_t impulse_count(ViewerId viewer, const TileKey& tile) const {
    const auto imp = impulses(tile);
    return static_cast<std::size_t>(std::count_if(imp.begin(), imp.end(), [&](const Impulse& i) { return i.viewer == viewer; }));
  }

  std::size_t total_impulses() const {
    std::size_t n = 0;
    for (const auto& [k, v] : by_tile_) n += v.size();
    return n;
  }

  // Tiles whose impulse set changed since the last call.
  std::vector<TileKey> take_dirty() {
    std::vector<TileKey> out(dirty_.begin(), dirty_.end());
    std::sort(out.begin(), out.end());
    dirty_.clear();
    return out;
  }

 private:
  void remove(ViewerId viewer, int segment) {
    const auto it = by_viewer_.find({viewer, segment});
    if (it == by_viewer_.end()) return;
    for (const auto& tile : it->second) {
      auto t = by_tile_.find(tile);
      if (t == by_tile_.end()) continue;
      std::erase_if(t->second, [&](const Impulse& i) { return i.viewer == viewer; });
      if (t->second.empty()) by_tile_.erase(t);
      dirty_.insert(tile);
    }
    by_viewer_.erase(it);
  }

  double horizon_;
  int levels_;
  std::map<std::pair<ViewerId, int>, std::vector<TileKey>> by_viewer_;
  std::map<TileKey, std::vector<Impulse>> by_tile_;
  std::unordered_set<TileKey, TileKeyHash> dirty_;
};

}  // namespace coffee
