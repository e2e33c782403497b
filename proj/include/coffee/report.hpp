#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "coffee/error.hpp"
#include "coffee/kvfile.hpp"
#include "coffee/simulate.hpp"

namespace coffee {

// Raw contents of one run directory.
struct RunRecord {
  std::filesystem::path dir;
  SimulationConfig config;
  std::vector<std::pair<ViewerId, double>> latency;
  std::vector<AccessLogRow> access;
  std::vector<InterestLogRow> interest;
};

namespace detail {

class CsvReader {
 public:
  CsvReader(const std::filesystem::path& path, std::string_view header) : path_(path), in_(path) {
    if (!in_) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in_, line)) throw SchemaError(path.string() + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != header) throw SchemaError(path.string() + ": unexpected header '" + line + "'");
    width_ = split(header, ',').size();
  }

  bool next(std::vector<std::string>& cells) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (trim(line).empty()) continue;
      cells = split(line, ',');
      if (cells.size() != width_) fail("expected " + std::to_string(width_) + " fields");
      return true;
    }
    return false;
  }

  double real(const std::string& s) {
    const auto v = parse_double(s);
    if (!v) fail("bad number '" + s + "'");
    return *v;
  }
  std::int64_t integer(const std::string& s) {
    const auto v = parse_int(s);
    if (!v) fail("bad integer '" + s + "'");
    return *v;
  }

  [[noreturn]] void fail(const std::string& what) { throw ParseError(line_ + 1, path_.string() + ": " + what); }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t width_ = 0;
  std::size_t line_ = 0;
};

inline Outcome parse_outcome(std::string_view s) {
  for (auto o : {Outcome::kHit, Outcome::kTranscodeHit, Outcome::kMiss})
    if (s == to_string(o)) return o;
  throw SchemaError("unknown outcome '" + std::string(s) + "'");
}

}  // namespace detail

inline bool is_run_dir(const std::filesystem::path& dir) {
  return std::filesystem::exists(dir / "config.toml") && std::filesystem::exists(dir / "access_log.csv") &&
         std::filesystem::exists(dir / "interest_log.csv") && std::filesystem::exists(dir / "viewers.csv");
}

inline RunRecord load_run_dir(const std::filesystem::path& dir) {
  RunRecord r;
  r.dir = dir;
  r.config = SimulationConfig::load((dir / "config.toml").string());
  std::vector<std::string> c;
  {
    detail::CsvReader in(dir / "viewers.csv", kViewersHeader);
    while (in.next(c)) r.latency.push_back({static_cast<ViewerId>(in.integer(c[0])), in.real(c[1])});
  }
  {
    detail::CsvReader in(dir / "access_log.csv", kAccessLogHeader);
    while (in.next(c)) {
      AccessLogRow a;
      a.t = in.real(c[0]);
      a.viewer = static_cast<ViewerId>(in.integer(c[1]));
      const auto seg = in.integer(c[2]);
      const auto row = in.integer(c[3]);
      const auto col = in.integer(c[4]);
      a.tile = row < 0 ? TileKey::base_layer(static_cast<std::int32_t>(seg))
                       : TileKey{static_cast<std::int32_t>(seg), static_cast<std::uint8_t>(row), static_cast<std::uint8_t>(col)};
      a.level = static_cast<int>(in.integer(c[5]));
      a.outcome = detail::parse_outcome(c[6]);
      a.bytes_origin = static_cast<Bytes>(in.integer(c[7]));
      a.bytes_served = static_cast<Bytes>(in.integer(c[8]));
      a.transcode_level = static_cast<int>(in.integer(c[9]));
      if (a.level < 0 || a.level >= r.config.grid.levels() || a.transcode_level >= r.config.grid.levels())
        in.fail("level out of range");
      r.access.push_back(a);
    }
  }
  {
    detail::CsvReader in(dir / "interest_log.csv", kInterestLogHeader);
    while (in.next(c))
      r.interest.push_back({in.real(c[0]), static_cast<ViewerId>(in.integer(c[1])), static_cast<int>(in.integer(c[2])),
                            in.real(c[3]), in.real(c[4])});
  }
  return r;
}

// Ledger and metrics from the logs alone.
inline RunResult recompute(const RunRecord& r) {
  int steps = 0;
  const double gop = r.config.grid.gop_duration;
  for (const auto& a : r.access) steps = std::max(steps, static_cast<int>(std::floor(a.t / gop + 1e-9)) + 1);
  for (const auto& i : r.interest) steps = std::max(steps, static_cast<int>(std::floor(i.t / gop + 1e-9)) + 1);
  MetricsAccumulator acc(r.config, r.latency, steps);
  for (const auto& a : r.access) acc.add(a);
  for (const auto& i : r.interest) acc.add(i);
  RunResult out;
  out.ledger = acc.ledger();
  out.report = acc.report();
  return out;
}

inline std::vector<RunRecord> scan_results(const std::filesystem::path& root) {
  std::vector<RunRecord> runs;
  if (!std::filesystem::exists(root)) throw IoError("no such directory " + root.string());
  if (is_run_dir(root)) {
    runs.push_back(load_run_dir(root));
    return runs;
  }
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_directory() && is_run_dir(e.path())) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) runs.push_back(load_run_dir(d));
  return runs;
}

// ---------------------------------------------------------------------------------------------
// Figure tables

struct Table {
  std::string header;
  std::vector<std::vector<std::string>> rows;

  std::string csv() const {
    std::ostringstream o;
    o << header << '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) o << (i ? "," : "") << r[i];
      o << '\n';
    }
    return o.str();
  }
};

struct ReportTables {
  Table summary, reduction_vs_capacity, cost_vs_time, cost_vs_td, transcode_vs_td, group_hit, interest_hit;

  std::vector<std::pair<std::string, const Table*>> all() const {
    return {{"summary.csv", &summary},
            {"reduction_vs_capacity.csv", &reduction_vs_capacity},
            {"cost_vs_time.csv", &cost_vs_time},
            {"cost_vs_td.csv", &cost_vs_td},
            {"transcode_vs_td.csv", &transcode_vs_td},
            {"group_hit.csv", &group_hit},
            {"interest_hit.csv", &interest_hit}};
  }
};

namespace detail {

struct Mean {
  double sum = 0.0;
  int n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  double value() const { return n ? sum / n : 0.0; }
};

}  // namespace detail

// Means over seeds, keyed by the swept parameters.
inline ReportTables build_report(const std::vector<RunRecord>& runs) {
  ReportTables t;
  t.summary.header = std::string(kMetricsHeader);
  t.reduction_vs_capacity.header = "policy,predictor,td_scale,capacity_frac,runs,backhaul_reduction,backhaul_reduction_warm";
  t.cost_vs_time.header = "policy,predictor,capacity_frac,td_scale,seed,t,cost_per_user_usd";
  t.cost_vs_td.header = "policy,predictor,capacity_frac,td_scale,runs,cost_per_user_usd";
  t.transcode_vs_td.header = "policy,predictor,capacity_frac,td_scale,runs,transcode_bytes";
  t.group_hit.header = "policy,predictor,capacity_frac,td_scale,group,runs,hit_ratio";
  t.interest_hit.header = "policy,predictor,seed,t,interest_hit_ratio";

  using Key = std::tuple<std::string, std::string, double, double>;  // policy, predictor, capacity, td
  std::map<Key, detail::Mean> red, warm, cost, tcb;
  std::map<std::tuple<std::string, std::string, double, double, std::size_t>, detail::Mean> groups;
  const auto fd = [](double v) { return format_double(v); };
  for (const auto& run : runs) {
    const auto res = recompute(run);
    const auto& m = res.report;
    t.summary.rows.push_back(split(metrics_row(m), ','));
    const Key k{m.policy, m.predictor, m.capacity_frac, m.td_scale};
    red[k].add(m.backhaul_reduction);
    warm[k].add(m.backhaul_reduction_warm);
    cost[k].add(m.cost_per_user_usd);
    tcb[k].add(static_cast<double>(m.transcode_bytes));
    for (std::size_t g = 0; g < m.group_hit_ratios.size(); ++g)
      groups[{m.policy, m.predictor, m.capacity_frac, m.td_scale, g}].add(m.group_hit_ratios[g]);
    for (const auto& b : res.ledger.series)
      t.cost_vs_time.rows.push_back({m.policy, m.predictor, fd(m.capacity_frac), fd(m.td_scale), std::to_string(m.seed), fd(b.t),
                                     fd(m.viewers ? b.dollars / m.viewers : 0.0)});
    for (std::size_t i = 0; i < m.interest_series.size(); ++i)
      if (m.interest_series[i] >= 0)
        t.interest_hit.rows.push_back({m.policy, m.predictor, std::to_string(m.seed), fd(i * run.config.grid.gop_duration),
                                       fd(m.interest_series[i])});
  }
  for (const auto& [k, v] : red) {
    const auto& [pol, pred, cap, td] = k;
    t.reduction_vs_capacity.rows.push_back({pol, pred, fd(td), fd(cap), std::to_string(v.n), fd(v.value()), fd(warm[k].value())});
    t.cost_vs_td.rows.push_back({pol, pred, fd(cap), fd(td), std::to_string(v.n), fd(cost[k].value())});
    t.transcode_vs_td.rows.push_back({pol, pred, fd(cap), fd(td), std::to_string(v.n), fd(tcb[k].value())});
  }
  // Series ordered by their x axis.
  std::stable_sort(t.reduction_vs_capacity.rows.begin(), t.reduction_vs_capacity.rows.end(), [](const auto& a, const auto& b) {
    return std::tie(a[0], a[1], a[2]) != std::tie(b[0], b[1], b[2]) ? std::tie(a[0], a[1], a[2]) < std::tie(b[0], b[1], b[2])
                                                                     : *parse_double(a[3]) < *parse_double(b[3]);
  });
  for (const auto& [k, v] : groups) {
    const auto& [pol, pred, cap, td, g] = k;
    t.group_hit.rows.push_back({pol, pred, fd(cap), fd(td), std::to_string(g), std::to_string(v.n), fd(v.value())});
  }
  return t;
}

// ---------------------------------------------------------------------------------------------
// Static SVG line charts

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

inline std::string svg_escape(const std::string& s) {
  std::string o;
  for (char ch : s) {
    if (ch == '<') o += "&lt;";
    else if (ch == '>') o += "&gt;";
    else if (ch == '&') o += "&amp;";
    else o += ch;
  }
  return o;
}

inline std::string line_chart_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                  std::vector<Series> series) {
  constexpr double W = 640, H = 400, L = 70, R = 170, T = 40, B = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (!any) {
        x0 = x1 = x;
        y0 = y1 = y;
        any = true;
      }
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  y0 = std::min(y0, 0.0);
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << svg_escape(title) << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << format_double(std::round(xv * 1000) / 1000) << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << format_double(std::round(yv * 1000) / 1000) << "</text>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << svg_escape(xlabel) << "</text>\n";
  o << "<text x=\"15\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 " << (T + H - B) / 2
    << ")\">" << svg_escape(ylabel) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    auto& s = series[i];
    std::sort(s.points.begin(), s.points.end());
    const char* col = colors[i % 10];
    o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : s.points) o << px(x) << ',' << py(y) << ' ';
    o << "\"/>\n";
    o << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * i + 10 << "\" fill=\"" << col << "\">" << svg_escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

// Groups table rows into series: name from name_cols, x and y from the given columns.
inline std::vector<Series> series_of(const Table& t, const std::vector<std::size_t>& name_cols, std::size_t x, std::size_t y) {
  std::map<std::string, Series> by;
  for (const auto& r : t.rows) {
    std::string name;
    for (auto c : name_cols) name += (name.empty() ? "" : " ") + r[c];
    auto& s = by[name];
    s.name = name;
    s.points.push_back({*parse_double(r[x]), *parse_double(r[y])});
  }
  std::vector<Series> out;
  for (auto& [k, s] : by) out.push_back(std::move(s));
  return out;
}

inline void write_report(const std::filesystem::path& out, const ReportTables& t, bool svg) {
  for (const auto& [name, table] : t.all()) write_file_atomic(out / name, table->csv());
  if (!svg) return;
  write_file_atomic(out / "reduction_vs_capacity.svg",
                    line_chart_svg("Back-haul reduction", "normalized cache size", "reduction ratio",
                                   series_of(t.reduction_vs_capacity, {0, 1, 2}, 3, 5)));
  write_file_atomic(out / "cost_vs_td.svg",
                    line_chart_svg("Cost per user", "T/D scale", "USD", series_of(t.cost_vs_td, {0, 2}, 3, 5)));
  write_file_atomic(out / "transcode_vs_td.svg",
                    line_chart_svg("Transcoding traffic", "T/D scale", "bytes", series_of(t.transcode_vs_td, {0, 2}, 3, 5)));
  write_file_atomic(out / "cost_vs_time.svg",
                    line_chart_svg("Cumulative cost per user", "time (s)", "USD", series_of(t.cost_vs_time, {0, 2, 3, 4}, 5, 6)));
  write_file_atomic(out / "interest_hit.svg",
                    line_chart_svg("Interest hit ratio", "time (s)", "ratio", series_of(t.interest_hit, {0, 1, 2}, 3, 4)));
}

}  // namespace coffee
