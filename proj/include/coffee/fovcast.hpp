#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "coffee/error.hpp"
#include "coffee/grid.hpp"
#include "coffee/overlap.hpp"
#include "coffee/trace.hpp"

namespace coffee {

enum class Predictor { kTlp, kColPB, kColPLong, kGroundTruth, kAntipodal };

inline std::string_view to_string(Predictor p) {
  switch (p) {
    case Predictor::kTlp: return "tlp";
    case Predictor::kColPB: return "colpb";
    case Predictor::kColPLong: return "colp-long";
    case Predictor::kGroundTruth: return "ground-truth";
    case Predictor::kAntipodal: return "antipodal";
  }
  return "?";
}

inline Predictor parse_predictor(std::string_view s) {
  for (auto p : {Predictor::kTlp, Predictor::kColPB, Predictor::kColPLong, Predictor::kGroundTruth, Predictor::kAntipodal})
    if (s == to_string(p)) return p;
  throw ConfigError("unknown predictor '" + std::string(s) + "'");
}

struct PredictorConfig {
  double tlp_window_s = 1.0;         // truncation window for the linear fit
  double similarity_window_s = 1.0;  // trajectory span compared by DTW
  int dtw_samples_per_second = 10;   // trajectory resampling before DTW
  double colpb_self_floor = 0.8;
  double calibration_step_deg = 5.0;
  double dtw_unit_deg = kRadToDeg;   // predictor similarities use the DTW distance in radians
  bool operator==(const PredictorConfig&) const = default;
};

// ---------------------------------------------------------------------------------------------
// Truncated linear prediction

namespace detail {

// First index of the longest suffix whose successive differences never change sign.
inline std::size_t monotone_suffix_start(std::span<const double> x) {
  int sign = 0;
  std::size_t start = x.size() - 1;
  for (std::size_t k = x.size() - 1; k >= 1; --k) {
    const double d = x[k] - x[k - 1];
    const int s = d > 0 ? 1 : (d < 0 ? -1 : 0);
    if (s != 0) {
      if (sign != 0 && s != sign) break;
      sign = s;
    }
    start = k - 1;
  }
  return start;
}

// Least-squares line through (k, x[k]) for k in [start, n); returns value predicted at index at.
inline double fit_and_extrapolate(std::span<const double> x, std::size_t start, double at) {
  const std::size_t n = x.size() - start;
  if (n == 1) return x.back();
  double mean_k = 0.0, mean_x = 0.0;
  for (std::size_t k = start; k < x.size(); ++k) {
    mean_k += static_cast<double>(k);
    mean_x += x[k];
  }
  mean_k /= static_cast<double>(n);
  mean_x /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k = start; k < x.size(); ++k) {
    const double dk = static_cast<double>(k) - mean_k;
    sxy += dk * (x[k] - mean_x);
    sxx += dk * dk;
  }
  const double slope = sxy / sxx;
  return mean_x + slope * (at - mean_k);
}

}  // namespace detail

// Extrapolates yaw and pitch independently from the most recent monotone run inside the last
// window_s seconds of history. Yaw is unwrapped before fitting and wrapped afterwards.
inline Orientation tlp_predict(std::span<const Orientation> history, double horizon_s, double fps,
                               double window_s = 1.0) {
  const auto window = static_cast<std::size_t>(std::llround(window_s * fps));
  if (window == 0 || history.size() < window)
    throw InsufficientHistory("TLP needs " + std::to_string(window) + " samples, got " + std::to_string(history.size()));
  const auto recent = history.subspan(history.size() - window);
  std::vector<double> yaw(window), pitch(window);
  yaw[0] = recent[0].yaw;
  pitch[0] = recent[0].pitch;
  for (std::size_t k = 1; k < window; ++k) {
    yaw[k] = yaw[k - 1] + yaw_delta(recent[k - 1].yaw, recent[k].yaw);
    pitch[k] = recent[k].pitch;
  }
  const double at = static_cast<double>(window - 1) + horizon_s * fps;
  const double y = detail::fit_and_extrapolate(yaw, detail::monotone_suffix_start(yaw), at);
  const double p = detail::fit_and_extrapolate(pitch, detail::monotone_suffix_start(pitch), at);
  return Orientation{y, p, recent.back().roll}.normalized();
}

// TLP that degrades to holding the latest pose when the history is shorter than the window.
inline Orientation tlp_predict_or_hold(std::span<const Orientation> history, double horizon_s, double fps,
                                       double window_s = 1.0) {
  if (history.empty()) throw InsufficientHistory("no history at all");
  if (history.size() < static_cast<std::size_t>(std::llround(window_s * fps))) return history.back().normalized();
  return tlp_predict(history, horizon_s, fps, window_s);
}

// ---------------------------------------------------------------------------------------------
// DTW similarity

struct SimilarityScore {
  ViewerId viewer_a = 0;
  ViewerId viewer_b = 0;
  double dtw_distance = 0.0;
  double similarity = 1.0;
};

inline double similarity_from_distance(double d) { return 1.0 / (1.0 + d); }

// Classical DTW with great-circle point distance (degrees).
inline double dtw_distance(std::span<const Orientation> a, std::span<const Orientation> b) {
  if (a.empty() || b.empty()) throw EmptyTrajectory("DTW needs non-empty trajectories");
  std::vector<Vec3> va, vb;
  va.reserve(a.size());
  vb.reserve(b.size());
  for (const auto& o : a) va.push_back(direction(o));
  for (const auto& o : b) vb.push_back(direction(o));
  const auto dist = [&](std::size_t i, std::size_t j) {
    return std::acos(std::clamp(dot(va[i], vb[j]), -1.0, 1.0)) * kRadToDeg;
  };
  const std::size_t m = b.size();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m, kInf), cur(m, kInf);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double best;
      if (i == 0 && j == 0) best = 0.0;
      else {
        best = kInf;
        if (i > 0) best = std::min(best, prev[j]);
        if (j > 0) best = std::min(best, cur[j - 1]);
        if (i > 0 && j > 0) best = std::min(best, prev[j - 1]);
      }
      cur[j] = best + dist(i, j);
    }
    std::swap(prev, cur);
  }
  return prev[m - 1];
}

inline SimilarityScore dtw_similarity(std::span<const Orientation> a, std::span<const Orientation> b,
                                      ViewerId id_a = 0, ViewerId id_b = 0) {
  const double d = dtw_distance(a, b);
  return {id_a, id_b, d, similarity_from_distance(d)};
}

// Every stride-th pose counted back from the newest, oldest first.
inline std::vector<Orientation> resample_trajectory(std::span<const Orientation> traj, double fps,
                                                    int samples_per_second) {
  const auto stride = static_cast<std::size_t>(std::max<long long>(1, std::llround(fps / std::max(1, samples_per_second))));
  std::vector<Orientation> out;
  if (traj.empty()) return out;
  for (std::size_t k = traj.size(); k >= 1;) {
    out.push_back(traj[k - 1]);
    if (k <= stride) break;
    k -= stride;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------------------------
// FoV model: raster plus the candidate FoV centres used for calibration

struct CalibrationCandidate {
  Orientation center;
  std::vector<std::pair<int, double>> coverage;  // (tile index, overlap) for overlap > 0
};

// Candidate centres: tile centres first, then the step_deg yaw/pitch lattice. Each group is
// ordered by yaw then pitch, so the earliest candidate wins a tie.
inline std::vector<Orientation> calibration_centers(const TileGridSpec& grid, double step_deg) {
  const auto by_yaw = [](const Orientation& a, const Orientation& b) {
    return a.yaw != b.yaw ? a.yaw < b.yaw : a.pitch < b.pitch;
  };
  const auto same = [](const Orientation& a, const Orientation& b) { return a.yaw == b.yaw && a.pitch == b.pitch; };
  std::vector<Orientation> centers, lattice;
  for (int r = 0; r < grid.rows; ++r)
    for (int col = 0; col < grid.cols; ++col) centers.push_back(grid.tile_center(r, col));
  std::sort(centers.begin(), centers.end(), by_yaw);
  if (step_deg > 0) {
    const int ny = static_cast<int>(std::floor(360.0 / step_deg + 1e-9));
    const int np = static_cast<int>(std::floor(180.0 / step_deg + 1e-9));
    for (int i = 0; i < ny; ++i)
      for (int j = 0; j <= np; ++j) {
        const Orientation o{-180.0 + i * step_deg, -90.0 + j * step_deg, 0.0};
        if (std::none_of(centers.begin(), centers.end(), [&](const Orientation& c) { return same(c, o); }))
          lattice.push_back(o);
      }
    std::sort(lattice.begin(), lattice.end(), by_yaw);
  }
  centers.insert(centers.end(), lattice.begin(), lattice.end());
  return centers;
}

class FovModel {
 public:
  FovModel(const TileGridSpec& grid, const FovShape& fov, int samples_per_side = kDefaultSamplesPerSide,
           double calibration_step_deg = 5.0)
      : raster_(grid, fov, samples_per_side) {
    for (const auto& center : calibration_centers(grid, calibration_step_deg)) {
      CalibrationCandidate cand{center, {}};
      const FovFrustum fr(center, fov);
      for (int t = 0; t < grid.tile_count(); ++t) {
        const double v = raster_.overlap(fr, t);
        if (v > 0.0) cand.coverage.emplace_back(t, v);
      }
      candidates_.push_back(std::move(cand));
    }
  }

  const TileGridSpec& grid() const { return raster_.grid(); }
  const FovShape& fov() const { return raster_.fov(); }
  const OverlapRaster& raster() const { return raster_; }
  const std::vector<CalibrationCandidate>& candidates() const { return candidates_; }

  InterestMap pose_map(const Orientation& o, int segment = 0) const { return raster_.map(o, segment); }

 private:
  OverlapRaster raster_;
  std::vector<CalibrationCandidate> candidates_;
};

inline double covered_weight(const CalibrationCandidate& c, const InterestMap& weights) {
  double s = 0.0;
  for (const auto& [t, v] : c.coverage) s += v * weights[static_cast<std::size_t>(t)];
  return s;
}

// Replaces a tile-weight map by the overlap map of the single FoV that captures the most weight.
// Ties keep the earliest candidate.
inline InterestMap fov_calibrate(const InterestMap& weights, const FovModel& model) {
  const auto& cands = model.candidates();
  std::size_t best = 0;
  double best_w = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const double w = covered_weight(cands[i], weights);
    if (w > best_w) {
      best_w = w;
      best = i;
    }
  }
  InterestMap out(weights.segment(), weights.rows(), weights.cols());
  for (const auto& [t, v] : cands[best].coverage) out[static_cast<std::size_t>(t)] = v;
  return out;
}

// ---------------------------------------------------------------------------------------------
// Collaborative prediction

struct FrontViewer {
  ViewerId id = 0;
  std::span<const Orientation> recent;  // same video-time window as the target's latest history
  const InterestMap* truth = nullptr;   // ground-truth interest for the target segment
};

struct PredictionRequest {
  ViewerId viewer = 0;
  int segment = 0;
  std::span<const Orientation> history;  // target's own trajectory up to the knowledge point
  double horizon_s = 0.0;
  std::vector<FrontViewer> front;
};

struct FrontEvidence {
  double similarity = 0.0;
  const InterestMap* truth = nullptr;
};

inline double colpb_self_weight(double similarity_sum, double floor = 0.8) {
  return std::max(1.0 / (1.0 + similarity_sum), floor);
}

inline double colp_long_self_weight(double similarity_sum) { return 1.0 / (1.0 + similarity_sum); }

// self_weight * self + (1 - self_weight) * similarity-weighted mean of the front viewers' truths.
inline InterestMap fuse_interest(const InterestMap& self, std::span<const FrontEvidence> front, double self_weight) {
  double sim_sum = 0.0;
  for (const auto& f : front) sim_sum += f.similarity;
  if (front.empty() || !(sim_sum > 0.0)) return self;
  InterestMap out = self;
  for (std::size_t t = 0; t < out.size(); ++t) {
    double others = 0.0;
    for (const auto& f : front) others += f.similarity * (*f.truth)[t];
    out[t] = self_weight * self[t] + (1.0 - self_weight) * (others / sim_sum);
  }
  return out;
}

// A predicted interest map together with the tile set a viewer would download from it.
struct Prediction {
  InterestMap weights;
  std::vector<bool> requested;

  std::size_t requested_count() const { return static_cast<std::size_t>(std::count(requested.begin(), requested.end(), true)); }
};

inline std::vector<bool> support_of(const InterestMap& m) {
  std::vector<bool> r(m.size());
  for (std::size_t t = 0; t < m.size(); ++t) r[t] = m[t] > 0.0;
  return r;
}

// k highest-weighted tiles with positive weight; ties go to the lower tile index.
inline std::vector<bool> top_k_of(const InterestMap& m, std::size_t k) {
  std::vector<std::size_t> idx(m.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return m[a] > m[b]; });
  std::vector<bool> r(m.size());
  for (std::size_t i = 0; i < std::min(k, idx.size()); ++i)
    if (m[idx[i]] > 0.0) r[idx[i]] = true;
  return r;
}

class CollaborativePredictor {
 public:
  CollaborativePredictor(const FovModel& model, PredictorConfig cfg = {}) : model_(&model), cfg_(cfg) {}

  const FovModel& model() const { return *model_; }
  const PredictorConfig& config() const { return cfg_; }
  double fps() const { return model_->grid().fps(); }

  std::span<const Orientation> similarity_window(std::span<const Orientation> history) const {
    const auto w = static_cast<std::size_t>(std::llround(cfg_.similarity_window_s * fps()));
    return history.size() > w ? history.subspan(history.size() - w) : history;
  }

  double similarity(std::span<const Orientation> a, std::span<const Orientation> b) const {
    const double d = dtw_similarity(resample_trajectory(a, fps(), cfg_.dtw_samples_per_second),
                          resample_trajectory(b, fps(), cfg_.dtw_samples_per_second))
               .dtw_distance;
    return similarity_from_distance(d / cfg_.dtw_unit_deg);
  }

  InterestMap tlp_map(std::span<const Orientation> history, double horizon_s, int segment, bool strict) const {
    const Orientation pose = strict ? tlp_predict(history, horizon_s, fps(), cfg_.tlp_window_s)
                                    : tlp_predict_or_hold(history, horizon_s, fps(), cfg_.tlp_window_s);
    return model_->pose_map(pose, segment);
  }

  // Fuses an already-computed TLP map with front-viewer evidence.
  Prediction combine(Predictor kind, const InterestMap& tlp, std::span<const FrontEvidence> front) const {
    double sim_sum = 0.0;
    for (const auto& f : front) sim_sum += f.similarity;
    switch (kind) {
      case Predictor::kTlp: return {tlp, support_of(tlp)};
      case Predictor::kColPB: {
        auto fused = fuse_interest(tlp, front, colpb_self_weight(sim_sum, cfg_.colpb_self_floor));
        const auto k = static_cast<std::size_t>(std::count_if(tlp.values().begin(), tlp.values().end(),
                                                              [](double v) { return v > 0.0; }));
        auto req = top_k_of(fused, k);
        return {std::move(fused), std::move(req)};
      }
      case Predictor::kColPLong: {
        auto calibrated = fov_calibrate(fuse_interest(tlp, front, colp_long_self_weight(sim_sum)), *model_);
        auto req = support_of(calibrated);
        return {std::move(calibrated), std::move(req)};
      }
      default: throw ConfigError("predictor needs ground truth, use predict_oracle");
    }
  }

  Prediction predict(Predictor kind, const PredictionRequest& req, bool strict = true) const {
    const InterestMap tlp = tlp_map(req.history, req.horizon_s, req.segment, strict);
    std::vector<FrontEvidence> ev;
    if (kind != Predictor::kTlp) {
      const auto mine = similarity_window(req.history);
      for (const auto& f : req.front) ev.push_back({similarity(mine, f.recent), f.truth});
    }
    return combine(kind, tlp, ev);
  }

 private:
  const FovModel* model_;
  PredictorConfig cfg_;
};

inline Prediction colpb_predict(const PredictionRequest& req, const CollaborativePredictor& p) {
  return p.predict(Predictor::kColPB, req);
}

inline Prediction colp_long_predict(const PredictionRequest& req, const CollaborativePredictor& p) {
  return p.predict(Predictor::kColPLong, req);
}

// Oracle predictors for sanity runs: the true interest, or the FoV facing away from the
// viewer's mid-segment pose.
inline Prediction predict_oracle(Predictor kind, const InterestMap& truth, const Orientation& mid_pose,
                                 const FovModel& model) {
  if (kind == Predictor::kGroundTruth) return {truth, support_of(truth)};
  const Orientation anti{wrap_yaw(mid_pose.yaw + 180.0), -mid_pose.pitch, 0.0};
  auto m = model.pose_map(anti, truth.segment());
  auto req = support_of(m);
  return {std::move(m), std::move(req)};
}

// ---------------------------------------------------------------------------------------------
// Ground truth per viewer and segment

class TruthTable {
 public:
  TruthTable(const std::vector<ViewerTrace>& cohort, const OverlapRaster& raster) : grid_(raster.grid()) {
    for (const auto& t : cohort) {
      std::vector<InterestMap> maps;
      const auto segs = t.end_frame() / grid_.frames_per_gop;
      for (std::int64_t s = 0; s < segs; ++s) {
        if (!t.has_frames(s * grid_.frames_per_gop, (s + 1) * grid_.frames_per_gop)) {
          maps.emplace_back();
          continue;
        }
        maps.push_back(gop_interest(t, static_cast<int>(s), raster));
      }
      maps_.push_back(std::move(maps));
    }
  }

  int segments(std::size_t viewer) const { return static_cast<int>(maps_[viewer].size()); }
  bool has(std::size_t viewer, int segment) const {
    return segment >= 0 && segment < segments(viewer) && maps_[viewer][static_cast<std::size_t>(segment)].size() > 0;
  }
  const InterestMap& at(std::size_t viewer, int segment) const { return maps_[viewer].at(static_cast<std::size_t>(segment)); }

 private:
  TileGridSpec grid_;
  std::vector<std::vector<InterestMap>> maps_;
};

// ---------------------------------------------------------------------------------------------
// Accuracy harness

struct AccuracyRow {
  Predictor predictor = Predictor::kTlp;
  double horizon_s = 0.0;
  double overlap_ratio = 0.0;
  double l2_loss = 0.0;
  std::size_t samples = 0;
};

// Share of the actual interest mass that falls on requested tiles.
inline double overlap_ratio(const InterestMap& actual, const std::vector<bool>& requested) {
  double covered = 0.0, total = 0.0;
  for (std::size_t t = 0; t < actual.size(); ++t) {
    total += actual[t];
    if (requested[t]) covered += actual[t];
  }
  return total > 0.0 ? covered / total : 1.0;
}

// Squared L2 distance between the two maps after normalising each to sum 1.
inline double l2_loss(const InterestMap& predicted, const InterestMap& actual) {
  const double sp = predicted.sum(), sa = actual.sum();
  double loss = 0.0;
  for (std::size_t t = 0; t < actual.size(); ++t) {
    const double p = sp > 0.0 ? predicted[t] / sp : 0.0;
    const double q = sa > 0.0 ? actual[t] / sa : 0.0;
    loss += (p - q) * (p - q);
  }
  return loss;
}

struct EvaluationOptions {
  int segment_stride = 1;  // evaluate every n-th segment
};

// For each horizon h the target predicts segment s from its trajectory up to s - h, helped by
// every viewer whose latency is below l_i - h (they have already played s).
inline std::vector<AccuracyRow> evaluate_predictors(const std::vector<ViewerTrace>& cohort, Predictor predictor,
                                                    const std::vector<double>& horizons,
                                                    const CollaborativePredictor& engine, const TruthTable& truth,
                                                    EvaluationOptions opt = {}) {
  const auto& grid = engine.model().grid();
  const double fps = grid.fps();
  const auto tlp_window = static_cast<std::int64_t>(std::llround(engine.config().tlp_window_s * fps));
  std::vector<AccuracyRow> rows;
  for (double h : horizons) {
    AccuracyRow row{predictor, h, 0.0, 0.0, 0};
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      const auto& me = cohort[i];
      for (int s = 0; s < truth.segments(i); s += std::max(1, opt.segment_stride)) {
        if (!truth.has(i, s)) continue;
        const auto end = static_cast<std::int64_t>(std::floor((s * grid.gop_duration - h) * fps + 1e-9));
        if (end - tlp_window < me.first_frame) continue;
        const InterestMap& actual = truth.at(i, s);
        Prediction pred;
        if (predictor == Predictor::kGroundTruth || predictor == Predictor::kAntipodal) {
          const auto mid = s * static_cast<std::int64_t>(grid.frames_per_gop) + grid.frames_per_gop / 2;
          pred = predict_oracle(predictor, actual, me.pose(mid), engine.model());
        } else {
          PredictionRequest req{me.id, s, me.window(me.first_frame, end), h, {}};
          const auto win = engine.similarity_window(req.history);
          const std::int64_t wb = end - static_cast<std::int64_t>(win.size());
          for (std::size_t j = 0; j < cohort.size(); ++j) {
            if (j == i || !(cohort[j].latency_s < me.latency_s - h) || !truth.has(j, s)) continue;
            if (!cohort[j].has_frames(wb, end)) continue;
            req.front.push_back({cohort[j].id, cohort[j].window(wb, end), &truth.at(j, s)});
          }
          pred = engine.predict(predictor, req);
        }
        row.overlap_ratio += overlap_ratio(actual, pred.requested);
        row.l2_loss += l2_loss(pred.weights, actual);
        ++row.samples;
      }
    }
    if (row.samples) {
      row.overlap_ratio /= static_cast<double>(row.samples);
      row.l2_loss /= static_cast<double>(row.samples);
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace coffee
