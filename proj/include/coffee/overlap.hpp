#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "coffee/grid.hpp"

namespace coffee {

inline constexpr int kDefaultSamplesPerSide = 16;

// Rectilinear view frustum of a viewer looking along (yaw, pitch). Roll is ignored.
class FovFrustum {
 public:
  FovFrustum(const Orientation& o, const FovShape& fov) {
    const Orientation n = o.normalized();
    const double y = n.yaw * kDegToRad;
    const double p = n.pitch * kDegToRad;
    forward_ = direction(n);
    right_ = {-std::sin(y), std::cos(y), 0.0};
    up_ = {-std::sin(p) * std::cos(y), -std::sin(p) * std::sin(y), std::cos(p)};
    tan_h_ = std::tan(0.5 * fov.width_deg * kDegToRad);
    tan_v_ = std::tan(0.5 * fov.height_deg * kDegToRad);
  }

  bool contains(const Vec3& v) const {
    const double x = dot(v, forward_);
    if (x <= 0.0) return false;
    return std::abs(dot(v, right_)) <= x * tan_h_ && std::abs(dot(v, up_)) <= x * tan_v_;
  }

  const Vec3& forward() const { return forward_; }

 private:
  Vec3 forward_, right_, up_;
  double tan_h_ = 1.0, tan_v_ = 1.0;
};

// Sample point (i, j) of an n x n lattice of cell centers over the tile, in equirectangular coordinates.
inline Vec3 tile_sample(const TileGridSpec& grid, int row, int col, int n, int i, int j) {
  const double yl = grid.tile_yaw_left(col), yr = grid.tile_yaw_right(col);
  const double pt = grid.tile_pitch_top(row), pb = grid.tile_pitch_bottom(row);
  const double yaw = yl + (i + 0.5) / n * (yr - yl);
  const double pitch = pt - (j + 0.5) / n * (pt - pb);
  return direction(yaw, pitch);
}

// Fraction of the tile's equirectangular area inside the FoV, by counting lattice samples.
inline double fov_tile_overlap(const Orientation& orientation, int row, int col, const FovShape& fov,
                               const TileGridSpec& grid, int samples_per_side = kDefaultSamplesPerSide) {
  const FovFrustum frustum(orientation, fov);
  int inside = 0;
  for (int j = 0; j < samples_per_side; ++j)
    for (int i = 0; i < samples_per_side; ++i)
      if (frustum.contains(tile_sample(grid, row, col, samples_per_side, i, j))) ++inside;
  return static_cast<double>(inside) / (samples_per_side * samples_per_side);
}

// Precomputed sample directions for every tile of a grid, with an angular bound per tile so that
// whole tiles can be accepted or rejected without touching their samples. Agrees exactly with
// fov_tile_overlap at the same density.
class OverlapRaster {
 public:
  OverlapRaster(const TileGridSpec& grid, const FovShape& fov, int samples_per_side = kDefaultSamplesPerSide)
      : grid_(grid), fov_(fov), n_(samples_per_side) {
    const double th = std::tan(0.5 * fov.width_deg * kDegToRad);
    const double tv = std::tan(0.5 * fov.height_deg * kDegToRad);
    outer_ = std::atan(std::sqrt(th * th + tv * tv));
    inner_ = 0.5 * std::min(fov.width_deg, fov.height_deg) * kDegToRad;
    const int per_tile = n_ * n_;
    samples_.reserve(static_cast<std::size_t>(grid.tile_count() * per_tile));
    for (int r = 0; r < grid.rows; ++r) {
      for (int c = 0; c < grid.cols; ++c) {
        TileBound b;
        b.center = direction(grid.tile_center(r, c));
        for (int j = 0; j < n_; ++j) {
          for (int i = 0; i < n_; ++i) {
            const Vec3 v = tile_sample(grid, r, c, n_, i, j);
            samples_.push_back(v);
            b.radius = std::max(b.radius, std::acos(std::clamp(dot(v, b.center), -1.0, 1.0)));
          }
        }
        bounds_.push_back(b);
      }
    }
  }

  const TileGridSpec& grid() const { return grid_; }
  const FovShape& fov() const { return fov_; }
  int samples_per_side() const { return n_; }

  double overlap(const FovFrustum& frustum, int tile) const {
    const TileBound& b = bounds_[static_cast<std::size_t>(tile)];
    const double angle = std::acos(std::clamp(dot(frustum.forward(), b.center), -1.0, 1.0));
    constexpr double kMargin = 1e-9;
    if (angle > outer_ + b.radius + kMargin) return 0.0;
    if (angle + b.radius + kMargin < inner_) return 1.0;
    const int per_tile = n_ * n_;
    const Vec3* s = samples_.data() + static_cast<std::ptrdiff_t>(tile) * per_tile;
    int inside = 0;
    for (int k = 0; k < per_tile; ++k)
      if (frustum.contains(s[k])) ++inside;
    return static_cast<double>(inside) / per_tile;
  }

  double overlap(const Orientation& o, int row, int col) const {
    return overlap(FovFrustum(o, fov_), row * grid_.cols + col);
  }

  // Adds scale * overlap for every tile into out (size rows*cols).
  void accumulate(const Orientation& o, std::span<double> out, double scale = 1.0) const {
    const FovFrustum frustum(o, fov_);
    for (int t = 0; t < grid_.tile_count(); ++t) out[static_cast<std::size_t>(t)] += scale * overlap(frustum, t);
  }

  InterestMap map(const Orientation& o, int segment = 0) const {
    InterestMap m(segment, grid_);
    const FovFrustum frustum(o, fov_);
    for (int t = 0; t < grid_.tile_count(); ++t) m[static_cast<std::size_t>(t)] = overlap(frustum, t);
    return m;
  }

 private:
  struct TileBound {
    Vec3 center;
    double radius = 0.0;
  };

  TileGridSpec grid_;
  FovShape fov_;
  int n_;
  double outer_ = 0.0;
  double inner_ = 0.0;
  std::vector<Vec3> samples_;
  std::vector<TileBound> bounds_;
};

}  // namespace coffee
