#include <gtest/gtest.h>

#include <list>
#include <random>
#include <set>

#include "coffee/cache.hpp"
#include "coffee/trace.hpp"

namespace coffee {
namespace {

const TileGridSpec kGrid;

PolicyContext ctx(Bytes capacity, const ScoreBoard* board = nullptr, CostModel cost = CostModel::aws(kGrid)) {
  PolicyContext c;
  c.grid = kGrid;
  c.d_max = 20.0;
  c.cost = std::move(cost);
  c.capacity = capacity;
  c.scores = board;
  return c;
}

AccessRequest req(TileKey k, int level, double t, ViewerId v = 1) { return {v, k, level, t}; }

std::set<TileVersion> contents(const CachePolicy& p) {
  std::set<TileVersion> s;
  for (const auto& [v, e] : p.state().entries()) s.insert(v);
  return s;
}

const TileKey A{0, 1, 1}, B{0, 1, 2}, C{0, 2, 2};

TEST(CacheState, ExpiryDropsOldSegments) {
  CacheState s(kUnbounded);
  for (int seg = 0; seg < 5; ++seg) s.insert({{{seg, 0, 0}, 0}, 10, 0, 0, 0});
  const auto gone = s.expire(22.5, 20.0, 1.0);
  EXPECT_EQ(gone.size(), 3u);  // segments 0,1,2 are older than 2.5
  EXPECT_EQ(s.size(), 2u);
  EXPECT_EQ(s.occupancy(), 20u);
}

TEST(CacheState, EvictionTieBreak) {
  CacheState s(kUnbounded);
  s.insert({{{3, 0, 0}, 1}, 5, 0, 0, 1.0});
  s.insert({{{2, 0, 0}, 0}, 5, 0, 0, 1.0});
  s.insert({{{2, 0, 1}, 0}, 9, 0, 0, 1.0});
  s.insert({{{1, 0, 0}, 0}, 9, 0, 0, 2.0});
  EXPECT_EQ(*s.min_entry(), (TileVersion{{2, 0, 1}, 0}));  // equal score: oldest segment, then largest
  s.set_score({{2, 0, 1}, 0}, 3.0);
  EXPECT_EQ(*s.min_entry(), (TileVersion{{2, 0, 0}, 0}));
  EXPECT_EQ(s.levels({3, 0, 0}), level_bit(1));
}

TEST(Coffee, HitServesFromEdge) {
  ScoreBoard b(17, 6);
  CoffeePolicy p(ctx(kUnbounded, &b));
  EXPECT_EQ(p.access(req(A, 2, 0.0)).outcome, Outcome::kMiss);
  const auto r = p.access(req(A, 2, 0.5));
  EXPECT_EQ(r.outcome, Outcome::kHit);
  EXPECT_EQ(r.bytes_origin, 0u);
}

TEST(Coffee, ZeroCapacityAlwaysMisses) {
  ScoreBoard b(17, 6);
  CoffeePolicy p(ctx(0, &b));
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(p.access(req(A, 0, 0.1 * i)).outcome, Outcome::kMiss);
    EXPECT_TRUE(p.state().empty());
  }
}

void impulse(ScoreBoard& b, ViewerId v, TileKey k, int level, double tau) {
  const TileImpulse ti{k, level, 1.0};
  b.update(v, k.segment * 1000 + k.row * 10 + k.col, tau, std::span<const TileImpulse>(&ti, 1));
}

// Three tiles, room for two. Scores at t=0 with T=17: A 15+14=29, B 12, C 16.
TEST(Coffee, ThreeTileHandTrace) {
  ScoreBoard b(17, 6);
  impulse(b, 10, A, 0, 2.0);
  impulse(b, 11, A, 0, 3.0);
  impulse(b, 12, B, 0, 5.0);
  impulse(b, 13, C, 0, 1.0);
  CoffeePolicy p(ctx(2 * kGrid.size(0), &b));
  p.refresh_scores(0.0);
  EXPECT_EQ(p.access(req(A, 0, 0.0)).outcome, Outcome::kMiss);
  EXPECT_EQ(p.access(req(B, 0, 0.1)).outcome, Outcome::kMiss);
  EXPECT_EQ(contents(p), (std::set<TileVersion>{{A, 0}, {B, 0}}));
  EXPECT_EQ(p.access(req(C, 0, 0.2)).outcome, Outcome::kMiss);  // evicts B (12)
  EXPECT_EQ(contents(p), (std::set<TileVersion>{{A, 0}, {C, 0}}));
  const auto rb = p.access(req(B, 0, 0.3));  // B is inserted then is itself the minimum
  EXPECT_EQ(rb.outcome, Outcome::kMiss);
  EXPECT_EQ(contents(p), (std::set<TileVersion>{{A, 0}, {C, 0}}));
  EXPECT_EQ(p.access(req(A, 0, 0.4)).outcome, Outcome::kHit);
  EXPECT_EQ(p.access(req(C, 0, 0.5)).outcome, Outcome::kHit);
  EXPECT_DOUBLE_EQ(p.state().find({A, 0})->score, 29.0);
  EXPECT_DOUBLE_EQ(p.state().find({C, 0})->score, 16.0);
}

TEST(Coffee, LevelsAreDistinctItems) {
  ScoreBoard b(17, 6);
  CoffeePolicy p(ctx(kUnbounded, &b));
  p.access(req(A, 5, 0.0));
  EXPECT_EQ(p.access(req(A, 2, 0.1)).outcome, Outcome::kMiss);
}

// P_5(A) = 10, P_2(A) = 3, P_1(B) = 5 at t = 0; T/D = 0.5 for every level.
//   S(A5 | {2}) = 10 B_c,  S(A2 | {5}) = 3 B_c - 3 (B_c - 0.5 B_c) = 1.5 B_c,  S(B1) = 5 B_c.
class TransCoffeeTrace : public ::testing::Test {
 protected:
  void SetUp() override {
    for (ViewerId v = 0; v < 10; ++v) impulse(board, 100 + v, A, 5, 0.0);
    for (ViewerId v = 0; v < 3; ++v) impulse(board, 200 + v, A, 2, 0.0);
    for (ViewerId v = 0; v < 5; ++v) impulse(board, 300 + v, B, 1, 0.0);
  }
  double per_tile(double x) const { return x * 17.0 * CostModel::aws(kGrid).download_per_byte; }
  ScoreBoard board{17, 6};
};

TEST_F(TransCoffeeTrace, ThreeBranches) {
  TransCoffeePolicy p(ctx(15'000'000, &board, CostModel::td_ratio(kGrid, 0.5)));
  p.refresh_scores(0.0);
  EXPECT_EQ(p.access(req(A, 5, 0.0)).outcome, Outcome::kMiss);
  EXPECT_EQ(p.access(req(A, 5, 0.1)).outcome, Outcome::kHit);
  const auto t = p.access(req(A, 2, 0.2));
  EXPECT_EQ(t.outcome, Outcome::kTranscodeHit);
  EXPECT_EQ(t.transcode_level, 2);
  EXPECT_EQ(t.source_level, 5);
  EXPECT_EQ(t.bytes_origin, 0u);
  EXPECT_EQ(contents(p), (std::set<TileVersion>{{A, 5}, {A, 2}}));
  EXPECT_NEAR(p.state().find({A, 2})->score, per_tile(1.5), 1e-18);
  EXPECT_NEAR(p.state().find({A, 5})->score, per_tile(10.0), 1e-18);
  EXPECT_EQ(p.access(req(B, 1, 0.3)).outcome, Outcome::kMiss);  // over capacity: A2 has the least gain
  EXPECT_EQ(contents(p), (std::set<TileVersion>{{A, 5}, {B, 1}}));
  EXPECT_NEAR(p.state().find({B, 1})->score, per_tile(5.0), 1e-18);
  EXPECT_EQ(p.access(req(A, 2, 0.4)).outcome, Outcome::kTranscodeHit);
  EXPECT_EQ(contents(p), (std::set<TileVersion>{{A, 5}, {B, 1}}));
}

TEST_F(TransCoffeeTrace, ExpensiveTranscodeFetches) {
  TransCoffeePolicy p(ctx(kUnbounded, &board, CostModel::td_ratio(kGrid, 2.0)));
  p.refresh_scores(0.0);
  EXPECT_EQ(p.access(req(A, 5, 0.0)).outcome, Outcome::kMiss);
  const auto r = p.access(req(A, 2, 0.1));
  EXPECT_EQ(r.outcome, Outcome::kMiss);
  EXPECT_EQ(r.bytes_origin, kGrid.size(2));
  EXPECT_EQ(contents(p), (std::set<TileVersion>{{A, 5}, {A, 2}}));
}

TEST(CachingAll, HitWithinLifetimeMissAfter) {
  CachingAllPolicy p(ctx(0));
  const TileKey k{3, 0, 0};
  p.access(req(k, 1, 3.5));
  EXPECT_EQ(p.access(req(k, 1, 22.9)).outcome, Outcome::kHit);
  EXPECT_EQ(p.access(req(k, 1, 23.5)).outcome, Outcome::kMiss);
}

TEST(Lru, EvictsLeastRecent) {
  LruPolicy p(ctx(2 * kGrid.size(0)), PolicyKind::kLruLive);
  p.access(req(A, 0, 0.0));
  p.access(req(B, 0, 0.1));
  p.access(req(A, 0, 0.2));
  p.access(req(C, 0, 0.3));
  EXPECT_EQ(contents(p), (std::set<TileVersion>{{A, 0}, {C, 0}}));
}

TEST(Lru, ExpiresRegardlessOfRecency) {
  LruPolicy p(ctx(kUnbounded), PolicyKind::kLruLive);
  p.access(req(A, 0, 19.0));
  p.access(req(A, 0, 19.5));
  p.access(req({25, 0, 0}, 0, 25.0));
  EXPECT_FALSE(p.state().contains({A, 0}));
}

struct Stream {
  std::vector<AccessRequest> requests;
  std::unique_ptr<ScoreBoard> board;
};

// Requests for segment s fall inside [s, s + d_max]; a board with random impulses backs the
// score-driven policies.
Stream random_stream(std::uint64_t seed, int length = 400, int levels = 6, bool base = true) {
  std::mt19937_64 rng(seed);
  Stream s;
  s.board = std::make_unique<ScoreBoard>(17.0, levels);
  double t = 0.0;
  for (int i = 0; i < length; ++i) {
    t += 0.02 + 0.1 * unit_uniform(rng);
    const int newest = static_cast<int>(std::floor(t));
    const int seg = std::max(0, newest - static_cast<int>(rng() % 20));
    TileKey k{seg, std::uint8_t(rng() % 2), std::uint8_t(rng() % 3)};
    int level = static_cast<int>(rng() % levels);
    if (base && rng() % 10 == 0) {
      k = TileKey::base_layer(seg);
      level = 0;
    }
    s.requests.push_back({ViewerId(rng() % 12), k, level, t});
    if (rng() % 2) {
      const TileImpulse ti{k, level, 1.0};
      s.board->update(ViewerId(rng() % 12), i, t + 18.0 * unit_uniform(rng), std::span<const TileImpulse>(&ti, 1));
    }
  }
  return s;
}

struct Totals {
  Bytes requested = 0, hit = 0, miss_served = 0, origin = 0;
  int transcodes = 0;
};

Totals replay(CachePolicy& p, const std::vector<AccessRequest>& reqs, bool refresh = true,
              std::function<void(const AccessRequest&, const AccessResult&)> check = {}) {
  Totals tot;
  int last_step = -1;
  for (const auto& r : reqs) {
    if (refresh && static_cast<int>(std::floor(r.time)) != last_step) {
      last_step = static_cast<int>(std::floor(r.time));
      p.refresh_scores(last_step);
    }
    const auto res = p.access(r);
    tot.requested += res.bytes_served;
    (res.edge_served() ? tot.hit : tot.miss_served) += res.bytes_served;
    tot.origin += res.bytes_origin;
    tot.transcodes += res.transcode_level >= 0;
    if (check) check(r, res);
  }
  return tot;
}

// Reference LRU with expiry, written against a plain list.
struct ReferenceLru {
  Bytes capacity;
  std::list<std::pair<TileVersion, Bytes>> order;  // front = most recent
  Bytes used = 0;

  bool access(const TileVersion& v, Bytes size, double now) {
    bool hit = false;
    for (auto it = order.begin(); it != order.end(); ++it)
      if (it->first == v) {
        order.splice(order.begin(), order, it);
        hit = true;
        break;
      }
    if (!hit) {
      order.push_front({v, size});
      used += size;
    }
    for (auto it = order.begin(); it != order.end();) {
      if (it->first.tile.segment < now - 20.0) {
        used -= it->second;
        it = order.erase(it);
      } else {
        ++it;
      }
    }
    while (used > capacity) {
      used -= order.back().second;
      order.pop_back();
    }
    return hit;
  }
};

TEST(Lru, MatchesReferenceOnRandomStreams) {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const auto s = random_stream(seed);
    const Bytes cap = kGrid.size(5) * (1 + seed % 7);
    LruPolicy p(ctx(cap), PolicyKind::kLruLive);
    ReferenceLru ref{cap, {}, 0};
    for (const auto& r : s.requests) {
      const TileVersion v{r.tile, r.level};
      const bool want = ref.access(v, item_bytes(kGrid, v), r.time);
      ASSERT_EQ(p.access(r).outcome == Outcome::kHit, want) << "seed " << seed;
    }
  }
}

TEST(CachingAll, BackhaulEqualsUniqueVersionBytes) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto s = random_stream(seed);
    CachingAllPolicy p(ctx(0));
    std::set<TileVersion> seen;
    Bytes unique = 0;
    for (const auto& r : s.requests)
      if (seen.insert({r.tile, r.level}).second) unique += item_bytes(kGrid, {r.tile, r.level});
    EXPECT_EQ(replay(p, s.requests).origin, unique);
  }
}

TEST(Noc, RepeatedItemHitsAfterFirst) {
  NocPolicy p(ctx(kUnbounded), PolicyKind::kNocLive);
  EXPECT_EQ(p.access(req(A, 3, 0.0)).outcome, Outcome::kMiss);
  for (int i = 1; i < 5; ++i) EXPECT_EQ(p.access(req(A, 3, 0.1 * i)).outcome, Outcome::kHit);
}

TEST(Noc, ExpiryPurgesWeights) {
  NocPolicy p(ctx(kUnbounded), PolicyKind::kNocLive);
  p.access(req(A, 3, 0.0));
  EXPECT_GT(p.weight({A, 3}), 0.0);
  p.access(req({30, 0, 0}, 3, 30.0));
  EXPECT_EQ(p.weight({A, 3}), 0.0);
  EXPECT_FALSE(p.state().contains({A, 3}));
}

// Two top-level tiles, room for one, step 0.9, sizes equal the largest tile so each request
// adds 0.9 (capped at 1). Projection onto {y_A + y_B <= 1} subtracts the same amount from both.
TEST(Noc, AlternatingHandTrace) {
  auto c = ctx(kGrid.size(5));
  c.grid.level_bytes.back() = c.grid.size(0) * 30;  // make the top tile as large as a base layer
  c.capacity = c.grid.size(5);
  NocPolicy p(c, PolicyKind::kNocLive);
  const TileKey a{0, 0, 0}, b{0, 0, 1};
  const double s = double(c.grid.size(5)) / double(std::max(c.grid.size(5), c.grid.size(0) * 30));
  ASSERT_DOUBLE_EQ(s, 1.0);
  p.refresh_scores(0);
  EXPECT_EQ(p.access(req(a, 5, 0.1)).outcome, Outcome::kMiss);  // y = (0.9, 0)
  EXPECT_EQ(p.access(req(b, 5, 0.2)).outcome, Outcome::kMiss);  // y = (0.9, 0.9): tie, same segment and size, a goes first
  EXPECT_EQ(contents(p), (std::set<TileVersion>{{b, 5}}));
  p.refresh_scores(1);  // sum 1.8 > 1: both lose 0.4 -> (0.5, 0.5)
  EXPECT_NEAR(p.weight({a, 5}), 0.5, 1e-12);
  EXPECT_NEAR(p.weight({b, 5}), 0.5, 1e-12);
  EXPECT_EQ(p.access(req(a, 5, 1.1)).outcome, Outcome::kMiss);  // y = (1.0, 0.5): b evicted
  EXPECT_EQ(contents(p), (std::set<TileVersion>{{a, 5}}));
  EXPECT_EQ(p.access(req(b, 5, 1.2)).outcome, Outcome::kMiss);  // y = (1.0, 1.0): tie, a evicted
  EXPECT_EQ(contents(p), (std::set<TileVersion>{{b, 5}}));
  p.refresh_scores(2);  // (0.5, 0.5)
  EXPECT_EQ(p.access(req(b, 5, 2.1)).outcome, Outcome::kHit);  // y = (0.5, 1.0)
  EXPECT_EQ(p.access(req(a, 5, 2.2)).outcome, Outcome::kMiss);  // y = (1.0, 1.0): tie, a evicted again
  EXPECT_EQ(contents(p), (std::set<TileVersion>{{b, 5}}));
}

TEST(Noc, ProjectionSatisfiesOptimality) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::map<TileVersion, double> y;
    std::map<TileVersion, Bytes> size;
    const int n = 1 + int(rng() % 12);
    for (int i = 0; i < n; ++i) {
      const TileVersion v{{i, 0, 0}, 0};
      y[v] = unit_uniform(rng);
      size[v] = 1 + rng() % 50;
    }
    const double cap = 100.0 * unit_uniform(rng);
    auto x = y;
    NocPolicy::project_weights(x, size, cap);
    double load = 0, before = 0;
    for (const auto& [v, w] : x) {
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, y[v] + 1e-15);
      load += w * size[v];
      before += y[v] * size[v];
    }
    if (before <= cap) {
      EXPECT_EQ(x, y);
      continue;
    }
    EXPECT_NEAR(load, cap, 1e-9);
    // KKT: one lambda with x = max(0, y - lambda s)
    double lambda = -1;
    for (const auto& [v, w] : x)
      if (w > 0) {
        const double l = (y[v] - w) / size[v];
        if (lambda < 0) lambda = l;
        EXPECT_NEAR(l, lambda, 1e-9);
      }
    for (const auto& [v, w] : x)
      if (w == 0) {
        EXPECT_LE(y[v] / size[v], lambda + 1e-9);
      }
  }
}

TEST(LfStar, MarkedViewersNeverPopulateTheCache) {
  auto c = ctx(kUnbounded);
  c.marked = {7};
  LruPolicy p(c, PolicyKind::kLfStar);
  auto r = p.access(req(A, 1, 0.0, 7));
  EXPECT_EQ(r.outcome, Outcome::kMiss);
  EXPECT_FALSE(r.inserted);
  EXPECT_TRUE(p.state().empty());
  r = p.access(req(A, 1, 0.1, 3));
  EXPECT_EQ(r.outcome, Outcome::kMiss);
  EXPECT_TRUE(r.inserted);
  EXPECT_EQ(p.access(req(A, 1, 0.2, 7)).outcome, Outcome::kHit);
}

TEST(LfStar, InsertionLogHasNoMarkedFetches) {
  for (auto kind : {PolicyKind::kLfStar, PolicyKind::kLfStarT}) {
    const auto s = random_stream(5, 600);
    auto c = ctx(kGrid.size(5) * 4, nullptr, CostModel::td_ratio(kGrid, 0.5));
    c.marked = {0, 1, 2};
    LruPolicy p(c, kind);
    int inserted = 0;
    replay(p, s.requests, true, [&](const AccessRequest& r, const AccessResult& res) {
      if (res.inserted) {
        ++inserted;
        EXPECT_GT(r.viewer, 2u);
      }
    });
    EXPECT_GT(inserted, 0);
  }
}

TEST(LfStar, MarksLongestQuarter) {
  std::vector<ViewerTrace> c(9);
  for (std::size_t i = 0; i < c.size(); ++i) {
    c[i].id = ViewerId(i + 1);
    c[i].latency_s = double((i * 5) % 9);
  }
  EXPECT_EQ(longest_latency_quarter(c), (std::vector<ViewerId>{6, 8}));  // latencies 7 and 8
}

TEST(ETranscoding, LowRequestFetchesTopAndTranscodes) {
  ScoreBoard b(17, 6);
  ETranscodingPolicy p(ctx(kUnbounded, &b));
  const auto r = p.access(req(A, 0, 0.0));
  EXPECT_EQ(r.outcome, Outcome::kMiss);
  EXPECT_EQ(r.bytes_origin, kGrid.size(5));
  EXPECT_EQ(r.bytes_served, kGrid.size(0));
  EXPECT_EQ(r.transcode_level, 0);
  EXPECT_EQ(contents(p), (std::set<TileVersion>{{A, 5}}));
  const auto h = p.access(req(A, 5, 0.1));
  EXPECT_EQ(h.outcome, Outcome::kHit);
  EXPECT_EQ(h.transcode_level, -1);
}

TEST(ETranscoding, LedgerMatchesHandCount) {
  ScoreBoard b(17, 6);
  ETranscodingPolicy p(ctx(kUnbounded, &b));
  const std::vector<AccessRequest> script{req(A, 0, 0.0), req(A, 3, 0.1), req(B, 5, 0.2), req(A, 5, 0.3),
                                          req(B, 1, 0.4), req(C, 2, 0.5), req(C, 2, 0.6)};
  const auto tot = replay(p, script, false);
  // downloads at the top level: A, B, C; transcodes: A0, A3, B1, C2, C2
  EXPECT_EQ(tot.origin, 3 * kGrid.size(5));
  EXPECT_EQ(tot.transcodes, 5);
  const auto cost = CostModel::aws(kGrid);
  const double dollars = cost.download(double(tot.origin)) + cost.transcode(0) + cost.transcode(3) + cost.transcode(1) +
                         2 * cost.transcode(2);
  EXPECT_NEAR(dollars, 3 * 10416667 * 0.09e-9 + (2 * 0.0113 + 3 * 0.0225) / 60, 1e-15);
}

TEST(Ete0c, AlwaysMisses) {
  Ete0cPolicy p(ctx(kUnbounded));
  const auto s = random_stream(2);
  const auto tot = replay(p, s.requests);
  EXPECT_EQ(tot.hit, 0u);
  EXPECT_EQ(tot.origin, tot.requested);
  EXPECT_NEAR(CostModel::aws(kGrid).download(double(tot.origin)), double(tot.requested) * 0.09e-9, 1e-12);
}

TEST(Invariants, AllPoliciesRandomStreams) {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto s = random_stream(seed, 300);
    const Bytes cap = kGrid.size(5) * (seed % 9);
    for (auto kind : kAllPolicies) {
      auto c = ctx(cap, s.board.get(), CostModel::td_ratio(kGrid, (seed % 4) * 0.4));
      c.marked = {1, 2, 3};
      auto p = make_policy(kind, c);
      const auto tot = replay(*p, s.requests, seed % 2, [&](const AccessRequest& r, const AccessResult& res) {
        const auto& st = p->state();
        ASSERT_LE(st.occupancy(), st.capacity()) << to_string(kind);
        Bytes sum = 0;
        for (const auto& [v, e] : st.entries()) {
          ASSERT_GE(v.tile.segment, r.time - 20.0) << to_string(kind);
          sum += e.bytes;
        }
        ASSERT_EQ(sum, st.occupancy());
        if (res.outcome == Outcome::kMiss) {
          if (kind == PolicyKind::kETranscoding) ASSERT_GE(res.bytes_origin, res.bytes_served);
          else ASSERT_EQ(res.bytes_origin, res.bytes_served);
        } else {
          ASSERT_EQ(res.bytes_origin, 0u);
        }
        if (res.outcome == Outcome::kTranscodeHit) {
          ASSERT_GT(res.source_level, r.level);
        }
      });
      EXPECT_EQ(tot.requested, tot.hit + tot.miss_served) << to_string(kind);
    }
  }
}

TEST(Invariants, NoTranscodeWhenRatioAtLeastOne) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const auto s = random_stream(seed);
    for (double td : {1.0, 1.7}) {
      for (auto kind : {PolicyKind::kTransCoffee, PolicyKind::kLruLiveT, PolicyKind::kNocLiveT, PolicyKind::kLfStarT}) {
        auto p = make_policy(kind, ctx(kGrid.size(5) * 3, s.board.get(), CostModel::td_ratio(kGrid, td)));
        EXPECT_EQ(replay(*p, s.requests).transcodes, 0);
      }
    }
  }
}

TEST(Invariants, HitBytesGrowWithCapacity) {
  int violations = 0, comparisons = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto s = random_stream(seed, 300);
    for (auto kind : {PolicyKind::kCoffee, PolicyKind::kLruLive}) {
      Bytes prev = 0;
      for (int units = 0; units <= 12; units += 2) {
        auto p = make_policy(kind, ctx(kGrid.size(5) * units, s.board.get()));
        const Bytes hits = replay(*p, s.requests).hit;
        if (units > 0) {
          ++comparisons;
          if (hits < prev) {
            ++violations;
            ADD_FAILURE() << to_string(kind) << " seed " << seed << " cap " << units << ": " << hits << " < " << prev;
          }
        }
        prev = hits;
      }
    }
  }
  EXPECT_EQ(violations, 0) << "of " << comparisons;
}

TEST(Invariants, UnboundedMatchesCachingAll) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto s = random_stream(seed);
    CachingAllPolicy all(ctx(0));
    const Bytes want = replay(all, s.requests).origin;
    for (auto kind : {PolicyKind::kCoffee, PolicyKind::kLruLive, PolicyKind::kNocLive, PolicyKind::kTransCoffee}) {
      auto p = make_policy(kind, ctx(kUnbounded, s.board.get(), CostModel::td_ratio(kGrid, 1.0)));
      EXPECT_EQ(replay(*p, s.requests).origin, want) << to_string(kind);
    }
  }
}

}  // namespace
}  // namespace coffee
