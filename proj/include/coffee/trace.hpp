#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "coffee/error.hpp"
#include "coffee/grid.hpp"
#include "coffee/kvfile.hpp"
#include "coffee/overlap.hpp"

namespace coffee {

struct TraceSample {
  std::int64_t frame = 0;
  Orientation pose;
  bool operator==(const TraceSample&) const = default;
};

// Head orientation per frame for one viewer. Frames are contiguous from first_frame.
struct ViewerTrace {
  ViewerId id = 0;
  std::int64_t first_frame = 0;
  std::vector<Orientation> poses;
  double latency_s = 0.0;  // l_i
  double buffer_s = 0.0;   // b_i
  int device_level = 0;

  double download_lag() const { return latency_s - buffer_s; }
  std::int64_t end_frame() const { return first_frame + static_cast<std::int64_t>(poses.size()); }
  bool has_frames(std::int64_t begin, std::int64_t end) const { return begin >= first_frame && end <= end_frame(); }

  const Orientation& pose(std::int64_t frame) const {
    return poses.at(static_cast<std::size_t>(frame - first_frame));
  }

  // Poses for frames [begin, end), clipped to what the trace holds.
  std::span<const Orientation> window(std::int64_t begin, std::int64_t end) const {
    begin = std::max(begin, first_frame);
    end = std::min(end, end_frame());
    if (end <= begin) return {};
    return {poses.data() + (begin - first_frame), static_cast<std::size_t>(end - begin)};
  }

  std::vector<TraceSample> samples() const {
    std::vector<TraceSample> out;
    out.reserve(poses.size());
    for (std::size_t i = 0; i < poses.size(); ++i) out.push_back({first_frame + static_cast<std::int64_t>(i), poses[i]});
    return out;
  }

  void validate(double d_max, int levels) const {
    if (!(buffer_s < latency_s)) throw ConfigError("viewer " + std::to_string(id) + ": buffer must be shorter than latency");
    const double d = download_lag();
    if (d < 0.0 || d > d_max) throw ConfigError("viewer " + std::to_string(id) + ": download lag outside [0, d_max]");
    if (device_level < 0 || device_level >= levels) throw ConfigError("viewer " + std::to_string(id) + ": bad device level");
  }

  bool operator==(const ViewerTrace&) const = default;
};

inline InterestMap gop_interest(const ViewerTrace& trace, int segment, const OverlapRaster& raster) {
  const TileGridSpec& grid = raster.grid();
  const std::int64_t begin = static_cast<std::int64_t>(segment) * grid.frames_per_gop;
  const std::int64_t end = begin + grid.frames_per_gop;
  if (!trace.has_frames(begin, end))
    throw MissingFrames("viewer " + std::to_string(trace.id) + " lacks frames of segment " + std::to_string(segment));
  InterestMap m(segment, grid);
  for (std::int64_t f = begin; f < end; ++f) raster.accumulate(trace.pose(f), m.span());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] /= grid.frames_per_gop;
  return m;
}

inline InterestMap gop_interest(const ViewerTrace& trace, int segment, const TileGridSpec& grid, const FovShape& fov) {
  return gop_interest(trace, segment, OverlapRaster(grid, fov));
}

// ---------------------------------------------------------------------------------------------
// Trace CSV + companion cohort file

inline constexpr std::string_view kTraceHeader = "viewer_id,frame_index,timestamp_s,yaw_deg,pitch_deg,roll_deg";

inline std::filesystem::path companion_cohort_path(const std::filesystem::path& csv) {
  std::filesystem::path p = csv;
  p.replace_extension(".cohort.toml");
  return p;
}

inline void write_cohort_file(const std::filesystem::path& path, const std::vector<ViewerTrace>& traces) {
  KeyValueFile kv;
  kv.set("cohort.viewers", static_cast<std::int64_t>(traces.size()));
  for (const auto& t : traces) {
    const std::string sec = "viewer." + std::to_string(t.id) + ".";
    kv.set(sec + "latency_s", t.latency_s);
    kv.set(sec + "buffer_s", t.buffer_s);
    kv.set(sec + "device_level", t.device_level);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << kv.write();
}

inline void write_traces(const std::filesystem::path& csv, const std::vector<ViewerTrace>& traces,
                         const TileGridSpec& grid) {
  std::ofstream out(csv);
  if (!out) throw IoError("cannot write " + csv.string());
  out << kTraceHeader << '\n';
  const double fps = grid.fps();
  for (const auto& t : traces) {
    for (std::size_t i = 0; i < t.poses.size(); ++i) {
      const std::int64_t f = t.first_frame + static_cast<std::int64_t>(i);
      const auto& p = t.poses[i];
      out << t.id << ',' << f << ',' << format_double(static_cast<double>(f) / fps) << ',' << format_double(p.yaw)
          << ',' << format_double(p.pitch) << ',' << format_double(p.roll) << '\n';
    }
  }
  write_cohort_file(companion_cohort_path(csv), traces);
}

namespace detail {

inline void attach_cohort(std::vector<ViewerTrace>& traces, const KeyValueFile& kv, const TileGridSpec& grid) {
  for (auto& t : traces) {
    const std::string sec = "viewer." + std::to_string(t.id) + ".";
    if (!kv.has(sec + "latency_s")) throw SchemaError("cohort file has no latency for viewer " + std::to_string(t.id));
    t.latency_s = kv.get_double(sec + "latency_s", 0.0);
    t.buffer_s = kv.get_double(sec + "buffer_s", kv.get_double("cohort.buffer_s", 2.0));
    t.device_level = static_cast<int>(kv.get_int(sec + "device_level", 0));
    if (t.device_level < 0 || t.device_level >= grid.levels())
      throw SchemaError("viewer " + std::to_string(t.id) + ": device level out of range");
  }
}

}  // namespace detail

inline std::vector<ViewerTrace> parse_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty trace file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line, ',');
  const std::vector<std::string> required = {"viewer_id", "frame_index", "timestamp_s", "yaw_deg", "pitch_deg", "roll_deg"};
  std::vector<std::size_t> col(required.size());
  for (std::size_t r = 0; r < required.size(); ++r) {
    const auto it = std::find(header.begin(), header.end(), required[r]);
    if (it == header.end()) throw SchemaError("trace CSV missing column '" + required[r] + "'");
    col[r] = static_cast<std::size_t>(it - header.begin());
  }

  std::vector<ViewerTrace> traces;
  std::unordered_map<ViewerId, std::size_t> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != header.size()) throw ParseError(line_no, "expected " + std::to_string(header.size()) + " fields");
    const auto id = parse_int(cells[col[0]]);
    const auto frame = parse_int(cells[col[1]]);
    const auto ts = parse_double(cells[col[2]]);
    const auto yaw = parse_double(cells[col[3]]);
    const auto pitch = parse_double(cells[col[4]]);
    const auto roll = parse_double(cells[col[5]]);
    if (!id || *id < 0 || !frame || !ts || !yaw || !pitch || !roll) throw ParseError(line_no, "malformed field");
    const auto vid = static_cast<ViewerId>(*id);
    if (traces.empty() || traces.back().id != vid) {
      if (seen.count(vid)) throw ParseError(line_no, "rows of viewer " + std::to_string(vid) + " are not grouped");
      seen[vid] = traces.size();
      ViewerTrace t;
      t.id = vid;
      t.first_frame = *frame;
      traces.push_back(std::move(t));
    }
    ViewerTrace& t = traces.back();
    if (*frame != t.end_frame())
      throw ParseError(line_no, "frame_index " + std::to_string(*frame) + " breaks the ascending gap-free sequence");
    t.poses.push_back({*yaw, *pitch, *roll});
  }
  return traces;
}

inline std::vector<ViewerTrace> load_traces(const std::filesystem::path& csv, const TileGridSpec& grid,
                                            const std::filesystem::path& cohort) {
  std::ifstream in(csv);
  if (!in) throw IoError("cannot open " + csv.string());
  auto traces = parse_trace_csv(in);
  detail::attach_cohort(traces, KeyValueFile::load(cohort.string()), grid);
  return traces;
}

inline std::vector<ViewerTrace> load_traces(const std::filesystem::path& csv, const TileGridSpec& grid) {
  return load_traces(csv, grid, companion_cohort_path(csv));
}

// ---------------------------------------------------------------------------------------------
// Synthetic cohorts

// Uniform double in [0, 1) from the top 53 bits; stable across standard libraries.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct CohortSpec {
  int viewers = 48;
  double duration_s = 120.0;
  double correlation = 0.9;
  std::uint64_t seed = 1;
  double buffer_s = 2.0;
  double d_max = 20.0;
  bool operator==(const CohortSpec&) const = default;
};

namespace detail {

struct Wave {
  double amplitude, freq_hz, phase;
};

inline std::vector<Wave> draw_waves(std::mt19937_64& rng, int count, double amp_lo, double amp_hi, double f_lo,
                                    double f_hi) {
  std::vector<Wave> w;
  for (int k = 0; k < count; ++k) {
    const double a = amp_lo + (amp_hi - amp_lo) * unit_uniform(rng);
    const double f = f_lo + (f_hi - f_lo) * unit_uniform(rng);
    const double ph = 2.0 * std::numbers::pi * unit_uniform(rng);
    w.push_back({a, f, ph});
  }
  return w;
}

inline double eval_waves(const std::vector<Wave>& waves, double t) {
  double s = 0.0;
  for (const auto& w : waves) s += w.amplitude * std::sin(2.0 * std::numbers::pi * w.freq_hz * t + w.phase);
  return s;
}

}  // namespace detail

// Viewers follow a shared low-frequency reference path plus an independent smooth deviation
// scaled by (1 - correlation). Latencies are l = b + U[0, d_max]; device levels round-robin.
inline std::vector<ViewerTrace> synthesize_cohort(const CohortSpec& spec, const TileGridSpec& grid) {
  if (spec.viewers < 1) throw ConfigError("cohort needs at least one viewer");
  if (spec.correlation < 0.0 || spec.correlation > 1.0) throw ConfigError("correlation must be in [0, 1]");
  std::mt19937_64 rng(spec.seed);
  const double yaw_offset = 360.0 * unit_uniform(rng) - 180.0;
  const auto ref_yaw = detail::draw_waves(rng, 3, 20.0, 50.0, 0.02, 0.12);
  const auto ref_pitch = detail::draw_waves(rng, 2, 4.0, 12.0, 0.02, 0.10);
  const double scale = 1.0 - spec.correlation;
  const auto frames = static_cast<std::int64_t>(std::llround(spec.duration_s * grid.fps()));

  std::vector<ViewerTrace> out;
  out.reserve(static_cast<std::size_t>(spec.viewers));
  for (int v = 0; v < spec.viewers; ++v) {
    const auto dev_yaw = detail::draw_waves(rng, 3, 20.0, 45.0, 0.05, 0.25);
    const auto dev_pitch = detail::draw_waves(rng, 2, 6.0, 15.0, 0.05, 0.25);
    ViewerTrace t;
    t.id = static_cast<ViewerId>(v + 1);
    t.buffer_s = spec.buffer_s;
    t.latency_s = spec.buffer_s + spec.d_max * unit_uniform(rng);
    t.device_level = v % grid.levels();
    t.poses.reserve(static_cast<std::size_t>(frames));
    for (std::int64_t f = 0; f < frames; ++f) {
      const double time = static_cast<double>(f) / grid.fps();
      const double yaw = yaw_offset + detail::eval_waves(ref_yaw, time) + scale * detail::eval_waves(dev_yaw, time);
      const double pitch = detail::eval_waves(ref_pitch, time) + scale * detail::eval_waves(dev_pitch, time);
      t.poses.push_back(Orientation{yaw, pitch, 0.0}.normalized());
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace coffee
