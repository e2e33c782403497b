#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "coffee/error.hpp"

namespace coffee {

using ViewerId = std::uint32_t;
using Bytes = std::uint64_t;

inline constexpr double kDegToRad = std::numbers::pi / 180.0;
inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;

// Wraps yaw into [-180, 180).
inline double wrap_yaw(double yaw_deg) {
  double r = std::fmod(yaw_deg + 180.0, 360.0);
  if (r < 0.0) r += 360.0;
  if (r >= 360.0) r -= 360.0;
  return r - 180.0;
}

// Signed shortest yaw difference b - a, in [-180, 180).
inline double yaw_delta(double a_deg, double b_deg) { return wrap_yaw(b_deg - a_deg); }

struct Orientation {
  double yaw = 0.0;    // degrees, [-180, 180)
  double pitch = 0.0;  // degrees, [-90, 90]
  double roll = 0.0;   // degrees, carried but unused by tile mapping

  Orientation normalized() const {
    return {wrap_yaw(yaw), std::clamp(pitch, -90.0, 90.0), roll};
  }

  bool operator==(const Orientation&) const = default;
};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

inline Vec3 direction(double yaw_deg, double pitch_deg) {
  const double y = yaw_deg * kDegToRad;
  const double p = pitch_deg * kDegToRad;
  return {std::cos(p) * std::cos(y), std::cos(p) * std::sin(y), std::sin(p)};
}

inline Vec3 direction(const Orientation& o) { return direction(o.yaw, o.pitch); }

// Great-circle angle between two view directions, degrees.
inline double great_circle_deg(const Orientation& a, const Orientation& b) {
  const double c = std::clamp(dot(direction(a), direction(b)), -1.0, 1.0);
  return std::acos(c) * kRadToDeg;
}

struct FovShape {
  double width_deg = 90.0;
  double height_deg = 90.0;
  bool operator==(const FovShape&) const = default;
};

// Rows split pitch from +90 (row 0) down to -90; columns split yaw from -180 eastward.
struct TileGridSpec {
  int rows = 5;
  int cols = 6;
  double gop_duration = 1.0;
  int frames_per_gop = 30;
  std::vector<Bytes> level_bytes = default_level_bytes(5 * 6, 1.0);

  int tile_count() const { return rows * cols; }
  int levels() const { return static_cast<int>(level_bytes.size()); }
  int top_level() const { return levels() - 1; }
  double fps() const { return frames_per_gop / gop_duration; }
  Bytes size(int level) const { return level_bytes.at(static_cast<std::size_t>(level)); }

  double tile_pitch_top(int row) const { return 90.0 - 180.0 * row / rows; }
  double tile_pitch_bottom(int row) const { return 90.0 - 180.0 * (row + 1) / rows; }
  double tile_yaw_left(int col) const { return -180.0 + 360.0 * col / cols; }
  double tile_yaw_right(int col) const { return -180.0 + 360.0 * (col + 1) / cols; }
  Orientation tile_center(int row, int col) const {
    return {wrap_yaw(0.5 * (tile_yaw_left(col) + tile_yaw_right(col))),
            0.5 * (tile_pitch_top(row) + tile_pitch_bottom(row)), 0.0};
  }

  void validate() const {
    if (rows <= 0 || cols <= 0) throw ConfigError("tile grid needs positive rows and cols");
    if (rows * cols > 254) throw ConfigError("tile grid too large");
    if (!(gop_duration > 0.0) || frames_per_gop <= 0) throw ConfigError("GoP duration and frames must be positive");
    if (level_bytes.empty() || level_bytes.size() > 32) throw ConfigError("need 1..32 quality levels");
    for (std::size_t i = 0; i < level_bytes.size(); ++i) {
      if (level_bytes[i] == 0) throw ConfigError("tile sizes must be positive");
      if (i > 0 && level_bytes[i] <= level_bytes[i - 1]) throw ConfigError("tile sizes must strictly increase with level");
    }
  }

  // Whole-frame bitrates divided evenly over the tiles of one GoP.
  static std::vector<Bytes> level_bytes_from_mbps(const std::vector<double>& mbps, int tiles, double gop_s) {
    std::vector<Bytes> out;
    out.reserve(mbps.size());
    for (double m : mbps) out.push_back(static_cast<Bytes>(std::llround(m * 1e6 / 8.0 * gop_s / tiles)));
    return out;
  }

  static std::vector<Bytes> default_level_bytes(int tiles, double gop_s) {
    return level_bytes_from_mbps({100, 500, 1000, 1500, 2000, 2500}, tiles, gop_s);
  }

  bool operator==(const TileGridSpec&) const = default;
};

inline constexpr std::uint8_t kBaseLayerRow = 0xff;

struct TileKey {
  std::int32_t segment = 0;
  std::uint8_t row = 0;
  std::uint8_t col = 0;

  static TileKey base_layer(std::int32_t segment) { return {segment, kBaseLayerRow, kBaseLayerRow}; }
  bool is_base_layer() const { return row == kBaseLayerRow; }
  auto operator<=>(const TileKey&) const = default;
};

struct TileVersion {
  TileKey tile;
  int level = 0;
  auto operator<=>(const TileVersion&) const = default;
};

struct TileKeyHash {
  std::size_t operator()(const TileKey& k) const noexcept {
    return std::hash<std::uint64_t>{}((static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.segment)) << 16) |
                                      (static_cast<std::uint64_t>(k.row) << 8) | k.col);
  }
};

class InterestMap {
 public:
  InterestMap() = default;
  InterestMap(int segment, int rows, int cols, double fill = 0.0)
      : segment_(segment), rows_(rows), cols_(cols), values_(static_cast<std::size_t>(rows * cols), fill) {}
  InterestMap(int segment, const TileGridSpec& grid, double fill = 0.0)
      : InterestMap(segment, grid.rows, grid.cols, fill) {}

  int segment() const { return segment_; }
  void set_segment(int s) { segment_ = s; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }

  double& at(int row, int col) { return values_[static_cast<std::size_t>(row * cols_ + col)]; }
  double at(int row, int col) const { return values_[static_cast<std::size_t>(row * cols_ + col)]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }
  std::span<double> span() { return values_; }

  double sum() const {
    double s = 0.0;
    for (double v : values_) s += v;
    return s;
  }

  bool valid() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
  }

  bool operator==(const InterestMap&) const = default;

 private:
  int segment_ = 0;
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> values_;
};

}  // namespace coffee
