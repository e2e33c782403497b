#pragma once

#include <algorithm>
#include <bit>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "coffee/error.hpp"
#include "coffee/grid.hpp"
#include "coffee/score.hpp"
#include "coffee/transgain.hpp"

namespace coffee {

enum class Outcome { kHit, kTranscodeHit, kMiss };

inline std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::kHit: return "hit";
    case Outcome::kTranscodeHit: return "transcode_hit";
    case Outcome::kMiss: return "miss";
  }
  return "?";
}

struct AccessRequest {
  ViewerId viewer = 0;
  TileKey tile;
  int level = 0;
  double time = 0.0;
};

struct AccessResult {
  Outcome outcome = Outcome::kMiss;
  Bytes bytes_served = 0;  // size of the requested version
  Bytes bytes_origin = 0;
  int transcode_level = -1;  // target level when a transcode ran
  int source_level = -1;
  bool inserted = false;

  bool edge_served() const { return outcome != Outcome::kMiss; }
};

struct CacheEntry {
  TileVersion version;
  Bytes bytes = 0;
  double inserted_at = 0.0;
  double last_access = 0.0;
  double score = 0.0;
};

inline constexpr Bytes kUnbounded = std::numeric_limits<Bytes>::max();

// Stored versions plus an eviction index ordered by (score, segment, larger first, key).
class CacheState {
 public:
  explicit CacheState(Bytes capacity = 0) : capacity_(capacity) {}

  Bytes capacity() const { return capacity_; }
  Bytes occupancy() const { return occupancy_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool over_capacity() const { return occupancy_ > capacity_; }
  const std::map<TileVersion, CacheEntry>& entries() const { return entries_; }

  const CacheEntry* find(const TileVersion& v) const {
    const auto it = entries_.find(v);
    return it == entries_.end() ? nullptr : &it->second;
  }
  bool contains(const TileVersion& v) const { return entries_.count(v) != 0; }

  LevelSet levels(const TileKey& k) const {
    const auto it = levels_.find(k);
    return it == levels_.end() ? 0 : it->second;
  }

  void insert(const CacheEntry& e) {
    if (!entries_.emplace(e.version, e).second) throw Error("duplicate cache entry");
    index_.insert(index_key(e));
    occupancy_ += e.bytes;
    levels_[e.version.tile] |= level_bit(e.version.level);
  }

  void erase(const TileVersion& v) {
    const auto it = entries_.find(v);
    if (it == entries_.end()) return;
    index_.erase(index_key(it->second));
    occupancy_ -= it->second.bytes;
    auto l = levels_.find(v.tile);
    l->second &= ~level_bit(v.level);
    if (!l->second) levels_.erase(l);
    entries_.erase(it);
  }

  void set_score(const TileVersion& v, double score) {
    auto& e = entries_.at(v);
    if (e.score == score) return;
    index_.erase(index_key(e));
    e.score = score;
    index_.insert(index_key(e));
  }

  void touch(const TileVersion& v, double t) { entries_.at(v).last_access = t; }

  std::optional<TileVersion> min_entry() const {
    if (index_.empty()) return std::nullopt;
    return index_.begin()->version;
  }

  // Drops every segment captured before now - d_max; returns the removed versions.
  std::vector<TileVersion> expire(double now, double d_max, double gop_duration) {
    std::vector<TileVersion> gone;
    while (!entries_.empty()) {
      const auto& v = entries_.begin()->first;
      if (!(v.tile.segment * gop_duration < now - d_max)) break;
      gone.push_back(v);
      erase(v);
    }
    return gone;
  }

 private:
  struct IndexKey {
    double score;
    std::int32_t segment;
    Bytes bytes;
    TileVersion version;
    bool operator<(const IndexKey& o) const {
      if (score != o.score) return score < o.score;
      if (segment != o.segment) return segment < o.segment;
      if (bytes != o.bytes) return bytes > o.bytes;
      return version < o.version;
    }
  };
  static IndexKey index_key(const CacheEntry& e) { return {e.score, e.version.tile.segment, e.bytes, e.version}; }

  Bytes capacity_;
  Bytes occupancy_ = 0;
  std::map<TileVersion, CacheEntry> entries_;
  std::set<IndexKey> index_;
  std::unordered_map<TileKey, LevelSet, TileKeyHash> levels_;
};

enum class PolicyKind {
  kCoffee,
  kTransCoffee,
  kCachingAll,
  kLruLive,
  kLruLiveT,
  kNocLive,
  kNocLiveT,
  kLfStar,
  kLfStarT,
  kETranscoding,
  kEte0c,
};

inline constexpr PolicyKind kAllPolicies[] = {
    PolicyKind::kCoffee,   PolicyKind::kTransCoffee, PolicyKind::kCachingAll, PolicyKind::kLruLive,
    PolicyKind::kLruLiveT, PolicyKind::kNocLive,     PolicyKind::kNocLiveT,   PolicyKind::kLfStar,
    PolicyKind::kLfStarT,  PolicyKind::kETranscoding, PolicyKind::kEte0c,
};

inline std::string_view to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::kCoffee: return "coffee";
    case PolicyKind::kTransCoffee: return "transcoffee";
    case PolicyKind::kCachingAll: return "caching-all";
    case PolicyKind::kLruLive: return "lru-live";
    case PolicyKind::kLruLiveT: return "lru-live-t";
    case PolicyKind::kNocLive: return "noc-live";
    case PolicyKind::kNocLiveT: return "noc-live-t";
    case PolicyKind::kLfStar: return "lf-star";
    case PolicyKind::kLfStarT: return "lf-star-t";
    case PolicyKind::kETranscoding: return "e-transcoding";
    case PolicyKind::kEte0c: return "ete0c";
  }
  return "?";
}

inline PolicyKind parse_policy(std::string_view s) {
  for (auto k : kAllPolicies)
    if (s == to_string(k)) return k;
  throw ConfigError("unknown policy '" + std::string(s) + "'");
}

inline bool uses_scores(PolicyKind k) {
  return k == PolicyKind::kCoffee || k == PolicyKind::kTransCoffee || k == PolicyKind::kETranscoding;
}

struct PolicyContext {
  TileGridSpec grid;
  double d_max = 20.0;
  CostModel cost;
  Bytes capacity = 0;
  const ScoreBoard* scores = nullptr;
  std::vector<ViewerId> marked;  // LF*: viewers whose fetches are never cached
  double noc_step = 0.9;
};

// Size of one stored version; the base layer is one panorama at level 0.
inline Bytes item_bytes(const TileGridSpec& grid, const TileVersion& v) {
  if (v.tile.is_base_layer()) return grid.size(0) * static_cast<Bytes>(grid.tile_count());
  return grid.size(v.level);
}

class CachePolicy {
 public:
  explicit CachePolicy(PolicyContext ctx, Bytes capacity) : ctx_(std::move(ctx)), state_(capacity) {}
  virtual ~CachePolicy() = default;

  virtual PolicyKind kind() const = 0;
  const CacheState& state() const { return state_; }
  const PolicyContext& context() const { return ctx_; }

  // One request: serve, then drop expired segments, then evict down to capacity.
  AccessResult access(const AccessRequest& req) {
    if (req.tile.is_base_layer() && req.level != 0) throw Error("base layer has a single level");
    expire(req.time);
    AccessResult r = serve(req);
    expire(req.time);
    while (state_.over_capacity()) {
      const auto v = *state_.min_entry();
      state_.erase(v);
      on_erase(v, req.time);
    }
    return r;
  }

  // GoP boundary: forecasts were refreshed at time t.
  virtual void refresh_scores(double t) { clock_ = t; }
  // Tiles whose forecasts changed since the last refresh.
  virtual void refresh_tiles(std::span<const TileKey>, double) {}

 protected:
  virtual AccessResult serve(const AccessRequest& req) = 0;
  virtual double score_of(const TileVersion& v, const CacheEntry& e, double now) const = 0;
  virtual bool admit(const AccessRequest&) const { return true; }
  virtual void on_insert(const TileVersion&, double) {}
  virtual void on_erase(const TileVersion&, double) {}
  virtual void on_expire(double) {}

  double clock(double now) const { return clock_.value_or(now); }

  void expire(double now) {
    for (const auto& v : state_.expire(now, ctx_.d_max, ctx_.grid.gop_duration)) on_erase(v, now);
    on_expire(now);
  }
  Bytes bytes_of(const TileVersion& v) const { return item_bytes(ctx_.grid, v); }

  bool insert(const AccessRequest& req, const TileVersion& v) {
    if (!admit(req) || state_.contains(v)) return false;
    CacheEntry e{v, bytes_of(v), req.time, req.time, 0.0};
    e.score = score_of(v, e, req.time);
    state_.insert(e);
    on_insert(v, req.time);
    return true;
  }

  void rescore(const TileVersion& v, double now) {
    const auto* e = state_.find(v);
    if (e) state_.set_score(v, score_of(v, *e, now));
  }

  void rescore_tile(const TileKey& k, double now) {
    for (int lv : levels_of(state_.levels(k))) rescore({k, lv}, now);
  }

  void rescore_all(double now) {
    std::vector<TileVersion> all;
    all.reserve(state_.size());
    for (const auto& [v, e] : state_.entries()) all.push_back(v);
    for (const auto& v : all) rescore(v, now);
  }

  std::optional<int> higher_cached(const TileKey& k, int r) const {
    const LevelSet above = state_.levels(k) & ~(level_bit(r + 1) - 1);
    if (!above) return std::nullopt;
    return std::countr_zero(above);
  }

  AccessResult hit(const AccessRequest& req, const TileVersion& v) {
    state_.touch(v, req.time);
    rescore(v, req.time);
    return {Outcome::kHit, bytes_of(v), 0, -1, -1, false};
  }

  // Exact hit, else an origin fetch of the requested version.
  AccessResult plain_serve(const AccessRequest& req) {
    const TileVersion v{req.tile, req.level};
    if (state_.contains(v)) return hit(req, v);
    AccessResult r{Outcome::kMiss, bytes_of(v), bytes_of(v), -1, -1, false};
    r.inserted = insert(req, v);
    return r;
  }

  // Exact hit; else transcode from a cached higher level when that is cheaper than downloading;
  // else origin fetch. Both transcoded and fetched copies are inserted.
  AccessResult transcoding_serve(const AccessRequest& req) {
    const TileVersion v{req.tile, req.level};
    if (state_.contains(v)) return hit(req, v);
    const auto h = req.tile.is_base_layer() ? std::nullopt : higher_cached(req.tile, req.level);
    if (h && ctx_.cost.transcode_cheaper(req.level, static_cast<double>(bytes_of(v)))) {
      state_.touch({req.tile, *h}, req.time);
      rescore({req.tile, *h}, req.time);
      AccessResult r{Outcome::kTranscodeHit, bytes_of(v), 0, req.level, *h, false};
      r.inserted = insert(req, v);
      return r;
    }
    AccessResult r{Outcome::kMiss, bytes_of(v), bytes_of(v), -1, -1, false};
    r.inserted = insert(req, v);
    return r;
  }

  const ScoreBoard& board() const {
    if (!ctx_.scores) throw ConfigError(std::string(to_string(kind())) + " needs a score board");
    return *ctx_.scores;
  }

  PolicyContext ctx_;
  CacheState state_;
  std::optional<double> clock_;
};

// Coffee: every quality level is its own item, scored by its predicted popularity.
class CoffeePolicy : public CachePolicy {
 public:
  explicit CoffeePolicy(PolicyContext ctx) : CachePolicy(ctx, ctx.capacity) {}
  PolicyKind kind() const override { return PolicyKind::kCoffee; }

  void refresh_scores(double t) override {
    clock_ = t;
    rescore_all(t);
  }
  void refresh_tiles(std::span<const TileKey> tiles, double t) override {
    for (const auto& k : tiles) rescore_tile(k, t);
  }

 protected:
  AccessResult serve(const AccessRequest& req) override { return plain_serve(req); }
  double score_of(const TileVersion& v, const CacheEntry&, double now) const override {
    return board().level_score(v.tile, v.level, clock(now));
  }
};

// TransCoffee: items scored by their marginal unit caching gain given the other cached levels.
class TransCoffeePolicy : public CachePolicy {
 public:
  explicit TransCoffeePolicy(PolicyContext ctx) : CachePolicy(ctx, ctx.capacity) {
    for (int k = 0; k < ctx_.grid.levels(); ++k) w_.push_back(static_cast<double>(ctx_.grid.size(k)));
  }
  PolicyKind kind() const override { return PolicyKind::kTransCoffee; }

  void refresh_scores(double t) override {
    clock_ = t;
    rescore_all(t);
  }
  void refresh_tiles(std::span<const TileKey> tiles, double t) override {
    for (const auto& k : tiles) rescore_tile(k, t);
  }

 protected:
  AccessResult serve(const AccessRequest& req) override { return transcoding_serve(req); }
  double score_of(const TileVersion& v, const CacheEntry&, double now) const override {
    const auto p = board().level_scores(v.tile, clock(now));
    const LevelSet others = state_.levels(v.tile) & ~level_bit(v.level);
    return marginal_unit_gain(v.level, others, p, ctx_.cost, w_);
  }
  void on_insert(const TileVersion& v, double now) override { rescore_tile(v.tile, now); }
  void on_erase(const TileVersion& v, double now) override { rescore_tile(v.tile, now); }

 private:
  std::vector<double> w_;
};

// Keeps every fetched version until its segment expires.
class CachingAllPolicy : public CachePolicy {
 public:
  explicit CachingAllPolicy(PolicyContext ctx) : CachePolicy(ctx, kUnbounded) {}
  PolicyKind kind() const override { return PolicyKind::kCachingAll; }

 protected:
  AccessResult serve(const AccessRequest& req) override { return plain_serve(req); }
  double score_of(const TileVersion&, const CacheEntry& e, double) const override { return e.inserted_at; }
};

// Least recently used, with the same segment expiry. Optionally transcoding, optionally
// refusing to cache fetches made for marked viewers (LF*).
class LruPolicy : public CachePolicy {
 public:
  LruPolicy(PolicyContext ctx, PolicyKind kind)
      : CachePolicy(ctx, ctx.capacity), kind_(kind), marked_(ctx_.marked.begin(), ctx_.marked.end()) {}
  PolicyKind kind() const override { return kind_; }

 protected:
  bool transcoding() const {
    return kind_ == PolicyKind::kLruLiveT || kind_ == PolicyKind::kLfStarT;
  }
  bool filters() const { return kind_ == PolicyKind::kLfStar || kind_ == PolicyKind::kLfStarT; }

  AccessResult serve(const AccessRequest& req) override {
    return transcoding() ? transcoding_serve(req) : plain_serve(req);
  }
  double score_of(const TileVersion&, const CacheEntry& e, double) const override { return e.last_access; }
  bool admit(const AccessRequest& req) const override { return !filters() || !marked_.count(req.viewer); }

 private:
  PolicyKind kind_;
  std::unordered_set<ViewerId> marked_;
};

// Online-gradient stand-in for NOC: each requested version carries a fractional weight that
// grows by step * size / max_size per request; once per GoP the weights are projected onto
// {sum size*y <= capacity, 0 <= y <= 1}. The physical cache evicts the lowest weight first.
class NocPolicy : public CachePolicy {
 public:
  NocPolicy(PolicyContext ctx, PolicyKind kind) : CachePolicy(ctx, ctx.capacity), kind_(kind) {
    max_bytes_ = std::max(ctx_.grid.size(ctx_.grid.top_level()), item_bytes(ctx_.grid, {TileKey::base_layer(0), 0}));
  }
  PolicyKind kind() const override { return kind_; }

  double weight(const TileVersion& v) const {
    const auto it = y_.find(v);
    return it == y_.end() ? 0.0 : it->second;
  }
  const std::map<TileVersion, double>& weights() const { return y_; }

  void refresh_scores(double t) override {
    clock_ = t;
    project();
    rescore_all(t);
  }

  // Euclidean projection of y onto {sum s_i y_i <= C, 0 <= y <= 1}: y_i = max(0, y_i - lambda s_i).
  static void project_weights(std::map<TileVersion, double>& y, const std::map<TileVersion, Bytes>& size,
                              double capacity) {
    double load = 0.0;
    for (const auto& [v, w] : y) load += w * static_cast<double>(size.at(v));
    if (load <= capacity) return;
    struct Item {
      double brk, s, y;
    };
    std::vector<Item> items;
    for (const auto& [v, w] : y) {
      const double s = static_cast<double>(size.at(v));
      if (w > 0.0) items.push_back({w / s, s, w});
    }
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.brk < b.brk; });
    // With items [j, n) active: load(lambda) = A - lambda * B.
    double a = 0.0, b = 0.0;
    for (const auto& it : items) {
      a += it.s * it.y;
      b += it.s * it.s;
    }
    double lambda = 0.0;
    double lo = 0.0;
    for (std::size_t j = 0; j < items.size(); ++j) {
      const double cand = (a - capacity) / b;
      if (cand <= items[j].brk && cand >= lo) {
        lambda = cand;
        break;
      }
      lo = items[j].brk;
      a -= items[j].s * items[j].y;
      b -= items[j].s * items[j].s;
      lambda = lo;
    }
    for (auto& [v, w] : y) w = std::max(0.0, w - lambda * static_cast<double>(size.at(v)));
  }

 protected:
  AccessResult serve(const AccessRequest& req) override {
    const TileVersion v{req.tile, req.level};
    auto& w = y_[v];
    sizes_[v] = bytes_of(v);
    w = std::min(1.0, w + ctx_.noc_step * static_cast<double>(bytes_of(v)) / static_cast<double>(max_bytes_));
    const auto r = kind_ == PolicyKind::kNocLiveT ? transcoding_serve(req) : plain_serve(req);
    rescore(v, req.time);
    return r;
  }
  double score_of(const TileVersion& v, const CacheEntry&, double) const override { return weight(v); }
  void on_expire(double now) override {
    const double limit = now - ctx_.d_max;
    while (!y_.empty() && y_.begin()->first.tile.segment * ctx_.grid.gop_duration < limit) {
      sizes_.erase(y_.begin()->first);
      y_.erase(y_.begin());
    }
  }

 private:
  void project() {
    if (state_.capacity() == kUnbounded) return;
    project_weights(y_, sizes_, static_cast<double>(state_.capacity()));
  }

  PolicyKind kind_;
  Bytes max_bytes_;
  std::map<TileVersion, double> y_;
  std::map<TileVersion, Bytes> sizes_;
};

// Stores only the top level; every lower request is produced by transcoding.
class ETranscodingPolicy : public CachePolicy {
 public:
  explicit ETranscodingPolicy(PolicyContext ctx) : CachePolicy(ctx, ctx.capacity) {}
  PolicyKind kind() const override { return PolicyKind::kETranscoding; }

  void refresh_scores(double t) override {
    clock_ = t;
    rescore_all(t);
  }
  void refresh_tiles(std::span<const TileKey> tiles, double t) override {
    for (const auto& k : tiles) rescore_tile(k, t);
  }

 protected:
  AccessResult serve(const AccessRequest& req) override {
    if (req.tile.is_base_layer()) return plain_serve(req);
    const int top = ctx_.grid.top_level();
    const TileVersion stored{req.tile, top};
    const Bytes want = bytes_of({req.tile, req.level});
    const int target = req.level < top ? req.level : -1;
    if (state_.contains(stored)) {
      state_.touch(stored, req.time);
      rescore(stored, req.time);
      return {target < 0 ? Outcome::kHit : Outcome::kTranscodeHit, want, 0, target, target < 0 ? -1 : top, false};
    }
    AccessResult r{Outcome::kMiss, want, bytes_of(stored), target, target < 0 ? -1 : top, false};
    r.inserted = insert(req, stored);
    return r;
  }
  double score_of(const TileVersion& v, const CacheEntry&, double now) const override {
    return board().final_score(v.tile, clock(now));
  }
};

// Zero-size cache.
class Ete0cPolicy : public CachePolicy {
 public:
  explicit Ete0cPolicy(PolicyContext ctx) : CachePolicy(ctx, 0) {}
  PolicyKind kind() const override { return PolicyKind::kEte0c; }

 protected:
  AccessResult serve(const AccessRequest& req) override {
    const Bytes b = bytes_of({req.tile, req.level});
    return {Outcome::kMiss, b, b, -1, -1, false};
  }
  double score_of(const TileVersion&, const CacheEntry&, double) const override { return 0.0; }
};

inline std::unique_ptr<CachePolicy> make_policy(PolicyKind kind, const PolicyContext& ctx) {
  switch (kind) {
    case PolicyKind::kCoffee: return std::make_unique<CoffeePolicy>(ctx);
    case PolicyKind::kTransCoffee: return std::make_unique<TransCoffeePolicy>(ctx);
    case PolicyKind::kCachingAll: return std::make_unique<CachingAllPolicy>(ctx);
    case PolicyKind::kLruLive:
    case PolicyKind::kLruLiveT:
    case PolicyKind::kLfStar:
    case PolicyKind::kLfStarT: return std::make_unique<LruPolicy>(ctx, kind);
    case PolicyKind::kNocLive:
    case PolicyKind::kNocLiveT: return std::make_unique<NocPolicy>(ctx, kind);
    case PolicyKind::kETranscoding: return std::make_unique<ETranscodingPolicy>(ctx);
    case PolicyKind::kEte0c: return std::make_unique<Ete0cPolicy>(ctx);
  }
  throw ConfigError("unknown policy");
}

// The floor(n/4) viewers with the longest playback latency (ties: larger id first).
template <class Trace>
std::vector<ViewerId> longest_latency_quarter(const std::vector<Trace>& cohort) {
  std::vector<std::pair<double, ViewerId>> by;
  for (const auto& t : cohort) by.push_back({t.latency_s, t.id});
  std::sort(by.begin(), by.end(), [](const auto& a, const auto& b) { return a > b; });
  std::vector<ViewerId> out;
  for (std::size_t i = 0; i < by.size() / 4; ++i) out.push_back(by[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace coffee
