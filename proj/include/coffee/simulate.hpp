#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <charconv>
#include <filesystem>
#include <functional>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "coffee/cache.hpp"
#include "coffee/error.hpp"
#include "coffee/fovcast.hpp"
#include "coffee/kvfile.hpp"
#include "coffee/overlap.hpp"
#include "coffee/score.hpp"
#include "coffee/trace.hpp"
#include "coffee/transgain.hpp"

namespace coffee {

enum class Pricing { kAws, kTdRatio };

inline std::string_view to_string(Pricing p) { return p == Pricing::kAws ? "aws" : "td-ratio"; }

inline Pricing parse_pricing(std::string_view s) {
  if (s == "aws") return Pricing::kAws;
  if (s == "td-ratio") return Pricing::kTdRatio;
  throw ConfigError("unknown pricing '" + std::string(s) + "' (aws, td-ratio)");
}

struct SimulationConfig {
  TileGridSpec grid;
  FovShape fov;
  int raster_samples = kDefaultSamplesPerSide;

  int viewers = 48;
  double duration_s = 120.0;
  double correlation = 0.9;
  std::string trace_file;  // empty: synthesize

  Predictor predictor = Predictor::kColPLong;
  PredictorConfig prediction;

  PolicyKind policy = PolicyKind::kCoffee;
  double capacity_frac = 0.4;  // of F; inf for unbounded
  double d_max = 20.0;
  double noc_step = 0.9;
  bool base_layer = false;
  bool base_layer_in_metrics = true;

  double buffer_s = 2.0;
  double horizon_extra_s = 15.0;

  Pricing pricing = Pricing::kAws;
  double td_scale = 1.0;
  double download_per_gb = kAwsDownloadPerGB;

  int groups = 8;
  std::uint64_t seed = 1;

  double horizon() const { return horizon_extra_s + buffer_s; }

  // F = d_max GoPs of every tile at the highest level.
  double normalizer() const {
    return d_max / grid.gop_duration * grid.tile_count() * static_cast<double>(grid.size(grid.top_level()));
  }

  Bytes capacity() const {
    if (std::isinf(capacity_frac)) return kUnbounded;
    return static_cast<Bytes>(std::llround(capacity_frac * normalizer()));
  }

  CostModel cost() const {
    CostModel c = pricing == Pricing::kAws ? CostModel::aws(grid, td_scale) : CostModel::td_ratio(grid, td_scale);
    const double per_byte = download_per_gb / 1e9;
    if (pricing == Pricing::kTdRatio)
      for (auto& t : c.transcode_base) t *= per_byte / c.download_per_byte;
    c.download_per_byte = per_byte;
    return c;
  }

  CohortSpec cohort_spec() const { return {viewers, duration_s, correlation, seed, buffer_s, d_max}; }

  void validate() const {
    grid.validate();
    if (!(fov.width_deg > 0 && fov.width_deg < 180 && fov.height_deg > 0 && fov.height_deg < 180))
      throw ConfigError("FoV extent must be in (0, 180) degrees");
    if (raster_samples < 1) throw ConfigError("fov.samples must be positive");
    if (viewers < 1) throw ConfigError("cohort.viewers must be positive");
    if (!(duration_s >= grid.gop_duration)) throw ConfigError("cohort.duration_s must cover one GoP");
    if (correlation < 0 || correlation > 1) throw ConfigError("cohort.correlation must be in [0, 1]");
    if (!(capacity_frac >= 0)) throw ConfigError("cache.capacity_frac must be nonnegative");
    if (!(d_max > 0)) throw ConfigError("cache.d_max must be positive");
    if (!(noc_step > 0)) throw ConfigError("cache.noc_step must be positive");
    if (!(buffer_s > 0)) throw ConfigError("stream.buffer_s must be positive");
    if (!(horizon_extra_s >= 0)) throw ConfigError("stream.horizon_extra_s must be nonnegative");
    if (!(td_scale >= 0) || !(download_per_gb >= 0)) throw ConfigError("costs must be nonnegative");
    if (groups < 1) throw ConfigError("metrics.groups must be positive");
    if (prediction.tlp_window_s <= 0 || prediction.similarity_window_s <= 0 || prediction.dtw_samples_per_second < 1 ||
        prediction.dtw_unit_deg <= 0)
      throw ConfigError("predictor windows and units must be positive");
  }

  KeyValueFile to_kv() const {
    KeyValueFile kv;
    kv.set("seed", std::to_string(seed));
    kv.set("cohort.viewers", viewers);
    kv.set("cohort.duration_s", duration_s);
    kv.set("cohort.correlation", correlation);
    kv.set("cohort.trace_file", trace_file);
    kv.set("grid.rows", grid.rows);
    kv.set("grid.cols", grid.cols);
    kv.set("grid.gop_s", grid.gop_duration);
    kv.set("grid.frames_per_gop", grid.frames_per_gop);
    std::string sizes;
    for (std::size_t i = 0; i < grid.level_bytes.size(); ++i) sizes += (i ? "," : "") + std::to_string(grid.level_bytes[i]);
    kv.set("grid.level_bytes", sizes);
    kv.set("fov.width_deg", fov.width_deg);
    kv.set("fov.height_deg", fov.height_deg);
    kv.set("fov.samples", raster_samples);
    kv.set("predictor.kind", std::string(to_string(predictor)));
    kv.set("predictor.tlp_window_s", prediction.tlp_window_s);
    kv.set("predictor.similarity_window_s", prediction.similarity_window_s);
    kv.set("predictor.dtw_samples_per_second", prediction.dtw_samples_per_second);
    kv.set("predictor.colpb_self_floor", prediction.colpb_self_floor);
    kv.set("predictor.calibration_step_deg", prediction.calibration_step_deg);
    kv.set("predictor.dtw_unit_deg", prediction.dtw_unit_deg);
    kv.set("cache.policy", std::string(to_string(policy)));
    kv.set("cache.capacity_frac", capacity_frac);
    kv.set("cache.d_max", d_max);
    kv.set("cache.noc_step", noc_step);
    kv.set("cache.base_layer", base_layer);
    kv.set("cache.base_layer_in_metrics", base_layer_in_metrics);
    kv.set("stream.buffer_s", buffer_s);
    kv.set("stream.horizon_extra_s", horizon_extra_s);
    kv.set("cost.pricing", std::string(to_string(pricing)));
    kv.set("cost.td_scale", td_scale);
    kv.set("cost.download_per_gb", download_per_gb);
    kv.set("metrics.groups", groups);
    return kv;
  }

  static const std::set<std::string>& keys() {
    static const std::set<std::string> k = [] {
      std::set<std::string> s;
      const auto kv = SimulationConfig{}.to_kv();
      for (const auto& [key, v] : kv.values()) s.insert(key);
      return s;
    }();
    return k;
  }

  static SimulationConfig from_kv(const KeyValueFile& kv) {
    for (const auto& [key, v] : kv.values())
      if (!keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
    SimulationConfig c;
    const auto seed = kv.get("seed");
    if (seed) {
      std::uint64_t v = 0;
      const auto res = std::from_chars(seed->data(), seed->data() + seed->size(), v);
      if (res.ec != std::errc() || res.ptr != seed->data() + seed->size()) throw ConfigError("seed must be an unsigned integer");
      c.seed = v;
    }
    const auto int_of = [&](const std::string& key, int fallback) {
      const auto v = kv.get_int(key, fallback);
      if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
        throw ConfigError("key '" + key + "' out of range");
      return static_cast<int>(v);
    };
    c.viewers = int_of("cohort.viewers", c.viewers);
    c.duration_s = kv.get_double("cohort.duration_s", c.duration_s);
    c.correlation = kv.get_double("cohort.correlation", c.correlation);
    c.trace_file = kv.get_string("cohort.trace_file", c.trace_file);
    c.grid.rows = int_of("grid.rows", c.grid.rows);
    c.grid.cols = int_of("grid.cols", c.grid.cols);
    c.grid.gop_duration = kv.get_double("grid.gop_s", c.grid.gop_duration);
    c.grid.frames_per_gop = int_of("grid.frames_per_gop", c.grid.frames_per_gop);
    if (const auto sizes = kv.get("grid.level_bytes")) {
      c.grid.level_bytes.clear();
      for (const auto& cell : split(*sizes, ',')) {
        const auto v = parse_int(cell);
        if (!v || *v <= 0) throw ConfigError("grid.level_bytes must list positive integers");
        c.grid.level_bytes.push_back(static_cast<Bytes>(*v));
      }
    }
    c.fov.width_deg = kv.get_double("fov.width_deg", c.fov.width_deg);
    c.fov.height_deg = kv.get_double("fov.height_deg", c.fov.height_deg);
    c.raster_samples = int_of("fov.samples", c.raster_samples);
    if (const auto p = kv.get("predictor.kind")) c.predictor = parse_predictor(*p);
    auto& pc = c.prediction;
    pc.tlp_window_s = kv.get_double("predictor.tlp_window_s", pc.tlp_window_s);
    pc.similarity_window_s = kv.get_double("predictor.similarity_window_s", pc.similarity_window_s);
    pc.dtw_samples_per_second = int_of("predictor.dtw_samples_per_second", pc.dtw_samples_per_second);
    pc.colpb_self_floor = kv.get_double("predictor.colpb_self_floor", pc.colpb_self_floor);
    pc.calibration_step_deg = kv.get_double("predictor.calibration_step_deg", pc.calibration_step_deg);
    pc.dtw_unit_deg = kv.get_double("predictor.dtw_unit_deg", pc.dtw_unit_deg);
    if (const auto p = kv.get("cache.policy")) c.policy = parse_policy(*p);
    c.capacity_frac = kv.get_double("cache.capacity_frac", c.capacity_frac);
    c.d_max = kv.get_double("cache.d_max", c.d_max);
    c.noc_step = kv.get_double("cache.noc_step", c.noc_step);
    c.base_layer = kv.get_bool("cache.base_layer", c.base_layer);
    c.base_layer_in_metrics = kv.get_bool("cache.base_layer_in_metrics", c.base_layer_in_metrics);
    c.buffer_s = kv.get_double("stream.buffer_s", c.buffer_s);
    c.horizon_extra_s = kv.get_double("stream.horizon_extra_s", c.horizon_extra_s);
    if (const auto p = kv.get("cost.pricing")) c.pricing = parse_pricing(*p);
    c.td_scale = kv.get_double("cost.td_scale", c.td_scale);
    c.download_per_gb = kv.get_double("cost.download_per_gb", c.download_per_gb);
    c.groups = int_of("metrics.groups", c.groups);
    return c;
  }

  static SimulationConfig parse(std::string_view text) { return from_kv(KeyValueFile::parse(text)); }
  static SimulationConfig load(const std::string& path) { return from_kv(KeyValueFile::load(path)); }
  std::string write() const { return to_kv().write(); }

  // "section.key=value"
  void apply_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
    const std::string key(trim(assignment.substr(0, eq)));
    if (!keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
    KeyValueFile kv = to_kv();
    kv.set(key, std::string(trim(assignment.substr(eq + 1))));
    *this = from_kv(kv);
  }

  bool operator==(const SimulationConfig&) const = default;
};

inline std::vector<ViewerTrace> make_cohort(const SimulationConfig& cfg) {
  return cfg.trace_file.empty() ? synthesize_cohort(cfg.cohort_spec(), cfg.grid) : load_traces(cfg.trace_file, cfg.grid);
}

// ---------------------------------------------------------------------------------------------
// Workload: every request and every forecast of a run. Does not depend on the cache policy.

struct ScheduledRequest {
  double time = 0.0;
  int step = 0;
  std::size_t viewer = 0;  // index into the cohort
  ViewerId id = 0;
  int segment = 0;
  int level = 0;
  std::vector<TileKey> tiles;
  double covered_bytes = 0.0;  // actual-FoV bytes among the downloaded tiles
  double actual_bytes = 0.0;
};

struct ForecastUpdate {
  ViewerId viewer = 0;
  int segment = 0;
  double tau = 0.0;
  std::vector<TileImpulse> tiles;
};

struct WorkloadStats {
  double build_seconds = 0.0;
  double max_step_seconds = 0.0;  // slowest per-GoP prediction + aggregation
  std::size_t predictions = 0;
};

struct Workload {
  SimulationConfig config;
  std::vector<ViewerTrace> cohort;
  int steps = 0;
  std::vector<ScheduledRequest> requests;                 // ordered by step, lag, id
  std::vector<std::vector<std::size_t>> requests_by_step;
  std::vector<std::vector<ForecastUpdate>> forecasts;     // issued at the start of each step
  WorkloadStats stats;
};

namespace detail {

// Prediction context for one viewer at one knowledge point: history up to frame `end`.
class ViewerSnapshot {
 public:
  ViewerSnapshot(const std::vector<ViewerTrace>& cohort, std::size_t me, std::int64_t end, double wall,
                 const CollaborativePredictor& engine, const TruthTable& truth, bool collaborative)
      : cohort_(&cohort), me_(me), wall_(wall), engine_(&engine), truth_(&truth) {
    const auto& t = cohort[me];
    end_ = std::max(end, t.first_frame + 1);
    history_ = t.window(t.first_frame, end_);
    if (!collaborative) return;
    const auto mine = engine.similarity_window(history_);
    const std::int64_t wb = end_ - static_cast<std::int64_t>(mine.size());
    sims_.assign(cohort.size(), -1.0);
    for (std::size_t j = 0; j < cohort.size(); ++j) {
      if (j == me || !(cohort[j].latency_s < t.latency_s) || !cohort[j].has_frames(wb, end_)) continue;
      sims_[j] = engine.similarity(mine, cohort[j].window(wb, end_));
    }
  }

  std::int64_t end() const { return end_; }

  Prediction predict(Predictor kind, int segment) const {
    const auto& grid = engine_->model().grid();
    const InterestMap* actual = truth_->has(me_, segment) ? &truth_->at(me_, segment) : nullptr;
    if (kind == Predictor::kGroundTruth || kind == Predictor::kAntipodal) {
      if (!actual) throw MissingFrames("no ground truth for segment " + std::to_string(segment));
      const auto& t = (*cohort_)[me_];
      const auto mid = static_cast<std::int64_t>(segment) * grid.frames_per_gop + grid.frames_per_gop / 2;
      return predict_oracle(kind, *actual, t.pose(mid), engine_->model());
    }
    const double horizon = segment * grid.gop_duration - static_cast<double>(end_) / grid.fps();
    const InterestMap tlp = engine_->tlp_map(history_, horizon, segment, false);
    std::vector<FrontEvidence> ev;
    if (kind != Predictor::kTlp) {
      const double done = (segment + 1) * grid.gop_duration;
      for (std::size_t j = 0; j < sims_.size(); ++j) {
        if (sims_[j] < 0.0 || !(wall_ - (*cohort_)[j].latency_s >= done - 1e-9) || !truth_->has(j, segment)) continue;
        ev.push_back({sims_[j], &truth_->at(j, segment)});
      }
    }
    return engine_->combine(kind, tlp, ev);
  }

 private:
  const std::vector<ViewerTrace>* cohort_;
  std::size_t me_;
  double wall_;
  const CollaborativePredictor* engine_;
  const TruthTable* truth_;
  std::int64_t end_ = 0;
  std::span<const Orientation> history_;
  std::vector<double> sims_;
};

inline std::int64_t knowledge_frame(const ViewerTrace& t, double wall, double fps) {
  return static_cast<std::int64_t>(std::floor((wall - t.latency_s) * fps + 1e-9));
}

}  // namespace detail

inline Workload build_workload(const SimulationConfig& cfg, std::vector<ViewerTrace> cohort) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  if (cohort.empty()) throw ConfigError("empty cohort");
  for (const auto& t : cohort) t.validate(cfg.d_max, cfg.grid.levels());
  Workload w;
  w.config = cfg;
  w.cohort = std::move(cohort);
  const auto& grid = cfg.grid;
  const double gop = grid.gop_duration;
  const double fps = grid.fps();
  const FovModel model(grid, cfg.fov, cfg.raster_samples, cfg.prediction.calibration_step_deg);
  const TruthTable truth(w.cohort, model.raster());
  const CollaborativePredictor engine(model, cfg.prediction);
  const bool collab = cfg.predictor == Predictor::kColPB || cfg.predictor == Predictor::kColPLong;
  const std::size_t n = w.cohort.size();

  int segments = std::numeric_limits<int>::max();
  for (std::size_t i = 0; i < n; ++i) segments = std::min(segments, truth.segments(i));
  if (segments <= 0) throw ConfigError("traces shorter than one GoP");

  std::vector<double> lag(n);
  int last_step = 0;
  for (std::size_t i = 0; i < n; ++i) {
    lag[i] = w.cohort[i].download_lag();
    last_step = std::max(last_step, static_cast<int>(std::floor(((segments - 1) * gop + lag[i]) / gop)));
  }
  w.steps = last_step + 1;

  // Viewer order inside a GoP: ascending lag, then id.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return lag[a] != lag[b] ? lag[a] < lag[b] : w.cohort[a].id < w.cohort[b].id;
  });

  const double horizon = cfg.horizon();
  w.requests_by_step.assign(static_cast<std::size_t>(w.steps), {});
  w.forecasts.assign(static_cast<std::size_t>(w.steps), {});

  const auto to_tiles = [&](const Prediction& p, int segment) {
    std::vector<TileKey> tiles;
    for (int t = 0; t < grid.tile_count(); ++t)
      if (p.requested[static_cast<std::size_t>(t)])
        tiles.push_back({segment, static_cast<std::uint8_t>(t / grid.cols), static_cast<std::uint8_t>(t % grid.cols)});
    return tiles;
  };

  for (int step = 0; step < w.steps; ++step) {
    const auto s0 = std::chrono::steady_clock::now();
    const double now = step * gop;
    for (std::size_t i : order) {
      const auto& me = w.cohort[i];
      // The request of this GoP, if any: segment sigma at sigma + d_i in [now, now + gop).
      const int sigma = static_cast<int>(std::ceil((now - lag[i]) / gop - 1e-9));
      const double tau_req = sigma * gop + lag[i];
      const bool requests = sigma >= 0 && sigma < segments && tau_req < now + gop - 1e-9;
      // Forecasts: every captured, not yet requested segment whose request falls inside the horizon.
      const int first = std::max(0, sigma);
      const int last = std::min({segments - 1, static_cast<int>(std::floor(now / gop + 1e-9)),
                                 static_cast<int>(std::floor((now + horizon - lag[i]) / gop + 1e-9))});
      if (first <= last) {
        const detail::ViewerSnapshot snap(w.cohort, i, detail::knowledge_frame(me, now, fps), now, engine, truth, collab);
        for (int s = first; s <= last; ++s) {
          const auto p = snap.predict(cfg.predictor, s);
          ++w.stats.predictions;
          ForecastUpdate f{me.id, s, s * gop + lag[i], {}};
          for (const auto& k : to_tiles(p, s)) f.tiles.push_back({k, me.device_level, 1.0});
          if (cfg.base_layer) f.tiles.push_back({TileKey::base_layer(s), 0, 1.0});
          w.forecasts[static_cast<std::size_t>(step)].push_back(std::move(f));
        }
      }
      if (!requests) continue;
      const detail::ViewerSnapshot snap(w.cohort, i, detail::knowledge_frame(me, tau_req, fps), tau_req, engine, truth,
                                        collab);
      const auto p = snap.predict(cfg.predictor, sigma);
      ++w.stats.predictions;
      ScheduledRequest r{tau_req, step, i, me.id, sigma, me.device_level, to_tiles(p, sigma), 0.0, 0.0};
      w.requests_by_step[static_cast<std::size_t>(step)].push_back(w.requests.size());
      w.requests.push_back(std::move(r));
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - s0).count();
    w.stats.max_step_seconds = std::max(w.stats.max_step_seconds, dt);
  }
  // Interest hit: per frame, the tiles touched by the actual FoV against the downloaded set;
  // bytes are averaged over the frames of the GoP.
  const auto& raster = model.raster();
  for (auto& r : w.requests) {
    std::vector<bool> got(static_cast<std::size_t>(grid.tile_count()));
    for (const auto& k : r.tiles) got[static_cast<std::size_t>(k.row * grid.cols + k.col)] = true;
    const auto& me = w.cohort[r.viewer];
    const double size = static_cast<double>(grid.size(r.level)) / grid.frames_per_gop;
    const std::int64_t f0 = static_cast<std::int64_t>(r.segment) * grid.frames_per_gop;
    for (std::int64_t f = f0; f < f0 + grid.frames_per_gop; ++f) {
      const FovFrustum fr(me.pose(f), cfg.fov);
      for (int t = 0; t < grid.tile_count(); ++t) {
        if (!(raster.overlap(fr, t) > 0.0)) continue;
        r.actual_bytes += size;
        if (got[static_cast<std::size_t>(t)]) r.covered_bytes += size;
      }
    }
  }
  w.stats.build_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return w;
}

inline Workload build_workload(const SimulationConfig& cfg) { return build_workload(cfg, make_cohort(cfg)); }

// ---------------------------------------------------------------------------------------------
// Logs, ledger and metrics

struct AccessLogRow {
  double t = 0.0;
  ViewerId viewer = 0;
  TileKey tile;
  int level = 0;
  Outcome outcome = Outcome::kMiss;
  Bytes bytes_origin = 0;
  Bytes bytes_served = 0;
  int transcode_level = -1;
  bool operator==(const AccessLogRow&) const = default;
};

struct InterestLogRow {
  double t = 0.0;
  ViewerId viewer = 0;
  int segment = 0;
  double covered_bytes = 0.0;
  double actual_bytes = 0.0;
  bool operator==(const InterestLogRow&) const = default;
};

struct LedgerBucket {
  double t = 0.0;
  Bytes origin_bytes = 0;   // cumulative
  Bytes served_bytes = 0;   // cumulative
  double dollars = 0.0;     // cumulative
  bool operator==(const LedgerBucket&) const = default;
};

struct CostLedger {
  Bytes requested_bytes = 0;
  Bytes origin_bytes = 0;
  Bytes hit_bytes = 0;          // served from the edge, transcoded or not
  Bytes miss_served_bytes = 0;  // requested bytes of misses
  Bytes transcode_bytes = 0;    // bytes produced by transcoding
  std::vector<std::uint64_t> transcodes;  // per target level
  double download_dollars = 0.0;
  double transcode_dollars = 0.0;
  std::vector<LedgerBucket> series;  // one bucket per GoP

  double dollars() const { return download_dollars + transcode_dollars; }
  std::uint64_t transcode_count() const {
    std::uint64_t n = 0;
    for (auto c : transcodes) n += c;
    return n;
  }
  bool operator==(const CostLedger&) const = default;
};

struct MetricsReport {
  std::string policy;
  std::string predictor;
  double capacity_frac = 0.0;
  double td_scale = 0.0;
  std::uint64_t seed = 0;
  int viewers = 0;
  double backhaul_reduction = 0.0;
  double backhaul_reduction_warm = 0.0;  // requests after the first d_max seconds only
  double cost_per_user_usd = 0.0;
  Bytes transcode_bytes = 0;
  double interest_hit_ratio = 0.0;
  Bytes requested_bytes = 0;
  Bytes origin_bytes = 0;
  Bytes hit_bytes = 0;
  std::uint64_t transcodes = 0;
  std::vector<double> group_hit_ratios;
  std::vector<double> interest_series;  // per GoP, -1 when nothing was requested
  bool operator==(const MetricsReport&) const = default;
};

// 1 - origin / requested, clipped to [0, 1].
inline double backhaul_reduction(Bytes origin, Bytes requested) {
  if (requested == 0) return 0.0;
  return std::clamp(1.0 - static_cast<double>(origin) / static_cast<double>(requested), 0.0, 1.0);
}

// Group of each viewer when the cohort is ranked by latency (ties by id) and cut into equal parts.
inline std::map<ViewerId, int> latency_groups(const std::vector<std::pair<ViewerId, double>>& latency, int groups) {
  auto ranked = latency;
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  std::map<ViewerId, int> g;
  const auto n = ranked.size();
  for (std::size_t r = 0; r < n; ++r) g[ranked[r].first] = static_cast<int>(r * static_cast<std::size_t>(groups) / n);
  return g;
}

template <class Trace>
std::vector<std::pair<ViewerId, double>> latencies_of(const std::vector<Trace>& cohort) {
  std::vector<std::pair<ViewerId, double>> out;
  for (const auto& t : cohort) out.push_back({t.id, t.latency_s});
  return out;
}

// Folds access and interest rows into the ledger and report. Replay and the reporter both use it.
class MetricsAccumulator {
 public:
  MetricsAccumulator(const SimulationConfig& cfg, const std::vector<std::pair<ViewerId, double>>& latency, int steps)
      : cfg_(cfg), cost_(cfg.cost()), groups_(latency_groups(latency, cfg.groups)), viewers_(static_cast<int>(latency.size())) {
    ledger_.transcodes.assign(static_cast<std::size_t>(cfg.grid.levels()), 0);
    buckets_.assign(static_cast<std::size_t>(std::max(steps, 0)), {});
    group_req_.assign(static_cast<std::size_t>(cfg.groups), 0.0);
    group_hit_.assign(static_cast<std::size_t>(cfg.groups), 0.0);
  }

  void add(const AccessLogRow& r) {
    if (r.tile.is_base_layer() && !cfg_.base_layer_in_metrics) return;
    auto& b = bucket(r.t);
    ledger_.requested_bytes += r.bytes_served;
    ledger_.origin_bytes += r.bytes_origin;
    b.origin += r.bytes_origin;
    b.served += r.bytes_served;
    double usd = cost_.download(static_cast<double>(r.bytes_origin));
    ledger_.download_dollars += usd;
    if (r.outcome == Outcome::kMiss) ledger_.miss_served_bytes += r.bytes_served;
    else ledger_.hit_bytes += r.bytes_served;
    if (r.transcode_level >= 0) {
      ++ledger_.transcodes.at(static_cast<std::size_t>(r.transcode_level));
      ledger_.transcode_bytes += r.bytes_served;
      const double tc = cost_.transcode(r.transcode_level);
      ledger_.transcode_dollars += tc;
      usd += tc;
    }
    b.dollars += usd;
    if (r.t >= cfg_.d_max - 1e-9) {
      warm_req_ += r.bytes_served;
      warm_origin_ += r.bytes_origin;
    }
    const auto g = groups_.find(r.viewer);
    if (g != groups_.end()) {
      group_req_[static_cast<std::size_t>(g->second)] += static_cast<double>(r.bytes_served);
      if (r.outcome != Outcome::kMiss) group_hit_[static_cast<std::size_t>(g->second)] += static_cast<double>(r.bytes_served);
    }
  }

  void add(const InterestLogRow& r) {
    auto& b = bucket(r.t);
    b.covered += r.covered_bytes;
    b.actual += r.actual_bytes;
    covered_ += r.covered_bytes;
    actual_ += r.actual_bytes;
  }

  const CostLedger& ledger() {
    ledger_.series.clear();
    LedgerBucket acc;
    for (std::size_t i = 0; i < buckets_.size(); ++i) {
      acc.t = static_cast<double>(i) * cfg_.grid.gop_duration;
      acc.origin_bytes += buckets_[i].origin;
      acc.served_bytes += buckets_[i].served;
      acc.dollars += buckets_[i].dollars;
      ledger_.series.push_back(acc);
    }
    return ledger_;
  }

  MetricsReport report() {
    const auto& l = ledger();
    MetricsReport m;
    m.policy = std::string(to_string(cfg_.policy));
    m.predictor = std::string(to_string(cfg_.predictor));
    m.capacity_frac = cfg_.capacity_frac;
    m.td_scale = cfg_.td_scale;
    m.seed = cfg_.seed;
    m.viewers = viewers_;
    m.backhaul_reduction = backhaul_reduction(l.origin_bytes, l.requested_bytes);
    m.backhaul_reduction_warm = backhaul_reduction(warm_origin_, warm_req_);
    m.cost_per_user_usd = viewers_ ? l.dollars() / viewers_ : 0.0;
    m.transcode_bytes = l.transcode_bytes;
    m.interest_hit_ratio = actual_ > 0 ? covered_ / actual_ : 1.0;
    m.requested_bytes = l.requested_bytes;
    m.origin_bytes = l.origin_bytes;
    m.hit_bytes = l.hit_bytes;
    m.transcodes = l.transcode_count();
    for (std::size_t g = 0; g < group_req_.size(); ++g)
      m.group_hit_ratios.push_back(group_req_[g] > 0 ? group_hit_[g] / group_req_[g] : 0.0);
    for (const auto& b : buckets_) m.interest_series.push_back(b.actual > 0 ? b.covered / b.actual : -1.0);
    return m;
  }

 private:
  struct Bucket {
    Bytes origin = 0, served = 0;
    double dollars = 0.0, covered = 0.0, actual = 0.0;
  };

  Bucket& bucket(double t) {
    const auto i = static_cast<std::size_t>(std::max(0.0, std::floor(t / cfg_.grid.gop_duration + 1e-9)));
    if (i >= buckets_.size()) buckets_.resize(i + 1);
    return buckets_[i];
  }

  SimulationConfig cfg_;
  CostModel cost_;
  std::map<ViewerId, int> groups_;
  int viewers_;
  CostLedger ledger_;
  std::vector<Bucket> buckets_;
  std::vector<double> group_req_, group_hit_;
  Bytes warm_req_ = 0, warm_origin_ = 0;
  double covered_ = 0.0, actual_ = 0.0;
};

struct RunResult {
  MetricsReport report;
  CostLedger ledger;
  std::vector<AccessLogRow> access_log;
  std::vector<InterestLogRow> interest_log;
  std::vector<TileVersion> insertions_by_marked;  // LF*: fetches of marked viewers that were cached
};

struct ReplayOptions {
  bool keep_logs = true;
  // Invoked after every access with the policy in its post-access state.
  std::function<void(const CachePolicy&, const AccessRequest&, const AccessResult&)> observer;
};

// Replays a workload through one policy. `cfg` overrides the policy, capacity and cost knobs
// of the workload's config; cohort and predictor settings come from the workload.
inline RunResult replay(const Workload& w, const SimulationConfig& cfg, const ReplayOptions& opt = {}) {
  cfg.validate();
  const auto& grid = w.config.grid;
  ScoreBoard board(cfg.horizon(), grid.levels());
  PolicyContext ctx;
  ctx.grid = grid;
  ctx.d_max = cfg.d_max;
  ctx.cost = cfg.cost();
  ctx.capacity = cfg.capacity();
  ctx.scores = &board;
  ctx.noc_step = cfg.noc_step;
  if (cfg.policy == PolicyKind::kLfStar || cfg.policy == PolicyKind::kLfStarT) ctx.marked = longest_latency_quarter(w.cohort);
  const std::set<ViewerId> marked(ctx.marked.begin(), ctx.marked.end());
  auto policy = make_policy(cfg.policy, ctx);
  const bool scored = uses_scores(cfg.policy);

  SimulationConfig report_cfg = w.config;
  report_cfg.policy = cfg.policy;
  report_cfg.capacity_frac = cfg.capacity_frac;
  report_cfg.td_scale = cfg.td_scale;
  report_cfg.pricing = cfg.pricing;
  report_cfg.download_per_gb = cfg.download_per_gb;
  report_cfg.d_max = cfg.d_max;
  report_cfg.base_layer_in_metrics = cfg.base_layer_in_metrics;
  report_cfg.groups = cfg.groups;
  MetricsAccumulator acc(report_cfg, latencies_of(w.cohort), w.steps);
  RunResult out;

  const double gop = grid.gop_duration;
  for (int step = 0; step < w.steps; ++step) {
    const double now = step * gop;
    if (scored) {
      for (const auto& f : w.forecasts[static_cast<std::size_t>(step)]) board.update(f.viewer, f.segment, f.tau, f.tiles);
      board.drop_before(static_cast<int>(std::ceil((now - cfg.d_max) / gop - 1e-9)));
      board.take_dirty();
    }
    policy->refresh_scores(now);
    for (std::size_t idx : w.requests_by_step[static_cast<std::size_t>(step)]) {
      const auto& r = w.requests[idx];
      if (scored) {
        board.consume(r.id, r.segment);
        const auto dirty = board.take_dirty();
        policy->refresh_tiles(dirty, now);
      }
      const auto serve = [&](const TileKey& k, int level) {
        const AccessRequest req{r.id, k, level, r.time};
        const auto res = policy->access(req);
        if (opt.observer) opt.observer(*policy, req, res);
        if (res.inserted && marked.count(r.id)) out.insertions_by_marked.push_back({k, level});
        const AccessLogRow row{r.time, r.id, k, level, res.outcome, res.bytes_origin, res.bytes_served, res.transcode_level};
        acc.add(row);
        if (opt.keep_logs) out.access_log.push_back(row);
      };
      if (w.config.base_layer) serve(TileKey::base_layer(r.segment), 0);
      for (const auto& k : r.tiles) serve(k, r.level);
      const InterestLogRow ir{r.time, r.id, r.segment, r.covered_bytes, r.actual_bytes};
      acc.add(ir);
      if (opt.keep_logs) out.interest_log.push_back(ir);
    }
  }
  out.ledger = acc.ledger();
  out.report = acc.report();
  return out;
}

inline RunResult replay(const Workload& w, const ReplayOptions& opt = {}) { return replay(w, w.config, opt); }

inline RunResult run(const SimulationConfig& cfg, const ReplayOptions& opt = {}) {
  return replay(build_workload(cfg), cfg, opt);
}

// ---------------------------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { kCapacity, kTdScale };

inline SweepAxis parse_axis(std::string_view s) {
  if (s == "capacity") return SweepAxis::kCapacity;
  if (s == "td_scale" || s == "td-scale" || s == "td") return SweepAxis::kTdScale;
  throw ConfigError("unknown sweep axis '" + std::string(s) + "' (capacity, td_scale)");
}

struct SweepPoint {
  SimulationConfig config;
  RunResult result;
};

// Cross product of seeds x values x policies. One workload per seed, shared by every point of
// that seed. Results come back in (seed, value, policy) order whatever the thread count.
inline std::vector<SweepPoint> sweep(const SimulationConfig& base, SweepAxis axis, const std::vector<double>& values,
                                     const std::vector<PolicyKind>& policies, const std::vector<std::uint64_t>& seeds,
                                     unsigned threads = 0, bool keep_logs = false) {
  if (values.empty() || policies.empty() || seeds.empty()) throw ConfigError("sweep needs values, policies and seeds");
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  std::vector<SweepPoint> out(seeds.size() * values.size() * policies.size());
  for (std::size_t s = 0; s < seeds.size(); ++s)
    for (std::size_t v = 0; v < values.size(); ++v)
      for (std::size_t p = 0; p < policies.size(); ++p) {
        SimulationConfig c = base;
        c.seed = seeds[s];
        c.policy = policies[p];
        (axis == SweepAxis::kCapacity ? c.capacity_frac : c.td_scale) = values[v];
        c.validate();
        out[(s * values.size() + v) * policies.size() + p].config = c;
      }

  std::vector<Workload> workloads(seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  const auto pool = [&](std::size_t count, auto&& job) {
    next = 0;
    std::vector<std::thread> ts;
    for (unsigned k = 0; k < std::min<std::size_t>(threads, count); ++k)
      ts.emplace_back([&] {
        for (std::size_t i; (i = next++) < count;) {
          try {
            job(i);
          } catch (...) {
            std::lock_guard lock(err_mu);
            if (!err) err = std::current_exception();
          }
        }
      });
    for (auto& t : ts) t.join();
    if (err) std::rethrow_exception(err);
  };
  pool(seeds.size(), [&](std::size_t s) {
    SimulationConfig c = base;
    c.seed = seeds[s];
    workloads[s] = build_workload(c);
  });
  const std::size_t per_seed = values.size() * policies.size();
  pool(out.size(), [&](std::size_t i) {
    out[i].result = replay(workloads[i / per_seed], out[i].config, {keep_logs, {}});
  });
  return out;
}

// ---------------------------------------------------------------------------------------------
// CSV output

inline constexpr std::string_view kMetricsHeader =
    "policy,predictor,capacity_frac,td_scale,seed,backhaul_reduction,cost_per_user_usd,transcode_bytes,"
    "interest_hit_ratio,backhaul_reduction_warm,requested_bytes,origin_bytes,hit_bytes,transcodes,viewers";
inline constexpr std::string_view kAccessLogHeader =
    "t,viewer,segment,row,col,level,outcome,bytes_origin,bytes_served,transcode_level";
inline constexpr std::string_view kInterestLogHeader = "t,viewer,segment,covered_bytes,actual_bytes";
inline constexpr std::string_view kViewersHeader = "viewer,latency_s,buffer_s,device_level";
inline constexpr std::string_view kGroupHeader = "group,hit_ratio";
inline constexpr std::string_view kLedgerHeader = "t,origin_bytes,served_bytes,dollars";

inline std::string metrics_row(const MetricsReport& m) {
  std::ostringstream o;
  o << m.policy << ',' << m.predictor << ',' << format_double(m.capacity_frac) << ',' << format_double(m.td_scale) << ','
    << m.seed << ',' << format_double(m.backhaul_reduction) << ',' << format_double(m.cost_per_user_usd) << ','
    << m.transcode_bytes << ',' << format_double(m.interest_hit_ratio) << ',' << format_double(m.backhaul_reduction_warm)
    << ',' << m.requested_bytes << ',' << m.origin_bytes << ',' << m.hit_bytes << ',' << m.transcodes << ',' << m.viewers;
  return o.str();
}

// Writes through a temporary sibling and renames, so readers never see half a file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline std::string access_log_csv(const std::vector<AccessLogRow>& rows) {
  std::ostringstream o;
  o << kAccessLogHeader << '\n';
  for (const auto& r : rows) {
    const int row = r.tile.is_base_layer() ? -1 : r.tile.row;
    const int col = r.tile.is_base_layer() ? -1 : r.tile.col;
    o << format_double(r.t) << ',' << r.viewer << ',' << r.tile.segment << ',' << row << ',' << col << ',' << r.level
      << ',' << to_string(r.outcome) << ',' << r.bytes_origin << ',' << r.bytes_served << ',' << r.transcode_level << '\n';
  }
  return o.str();
}

inline std::string interest_log_csv(const std::vector<InterestLogRow>& rows) {
  std::ostringstream o;
  o << kInterestLogHeader << '\n';
  for (const auto& r : rows)
    o << format_double(r.t) << ',' << r.viewer << ',' << r.segment << ',' << format_double(r.covered_bytes) << ','
      << format_double(r.actual_bytes) << '\n';
  return o.str();
}

inline std::string viewers_csv(const std::vector<ViewerTrace>& cohort) {
  std::ostringstream o;
  o << kViewersHeader << '\n';
  for (const auto& t : cohort)
    o << t.id << ',' << format_double(t.latency_s) << ',' << format_double(t.buffer_s) << ',' << t.device_level << '\n';
  return o.str();
}

inline std::string ledger_csv(const CostLedger& l) {
  std::ostringstream o;
  o << kLedgerHeader << '\n';
  for (const auto& b : l.series)
    o << format_double(b.t) << ',' << b.origin_bytes << ',' << b.served_bytes << ',' << format_double(b.dollars) << '\n';
  return o.str();
}

inline std::string group_csv(const MetricsReport& m) {
  std::ostringstream o;
  o << kGroupHeader << '\n';
  for (std::size_t g = 0; g < m.group_hit_ratios.size(); ++g) o << g << ',' << format_double(m.group_hit_ratios[g]) << '\n';
  return o.str();
}

// One run directory: the config, the cohort parameters and the raw logs, plus derived tables.
inline void write_run_dir(const std::filesystem::path& dir, const SimulationConfig& cfg, const std::vector<ViewerTrace>& cohort,
                          const RunResult& r) {
  write_file_atomic(dir / "config.toml", cfg.write());
  write_file_atomic(dir / "viewers.csv", viewers_csv(cohort));
  write_file_atomic(dir / "access_log.csv", access_log_csv(r.access_log));
  write_file_atomic(dir / "interest_log.csv", interest_log_csv(r.interest_log));
  write_file_atomic(dir / "ledger.csv", ledger_csv(r.ledger));
  write_file_atomic(dir / "groups.csv", group_csv(r.report));
  write_file_atomic(dir / "metrics.csv", std::string(kMetricsHeader) + "\n" + metrics_row(r.report) + "\n");
}

inline std::string run_dir_name(const SimulationConfig& c) {
  return std::string(to_string(c.policy)) + "_" + std::string(to_string(c.predictor)) + "_cap" + format_double(c.capacity_frac) +
         "_td" + format_double(c.td_scale) + "_seed" + std::to_string(c.seed);
}

}  // namespace coffee
