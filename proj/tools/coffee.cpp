#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "coffee/coffee.hpp"

namespace fs = std::filesystem;
using namespace coffee;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kConfig = 3, kIo = 4 };

struct Common {
  std::string config;
  std::string out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "config file (key/value with sections)");
  app->add_option("-o,--out", c.out, "output directory (default $COFFEE_OUT_DIR or ./results)");
  app->add_option("-s,--set", c.overrides, "override a config key, e.g. cache.capacity_frac=0.2")->take_all();
  app->add_option("--seed", c.seed, "random seed");
}

SimulationConfig load_config(const Common& c) {
  SimulationConfig cfg = c.config.empty() ? SimulationConfig{} : SimulationConfig::load(c.config);
  for (const auto& o : c.overrides) cfg.apply_override(o);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Common& c) {
  if (!c.out.empty()) return c.out;
  if (const char* env = std::getenv("COFFEE_OUT_DIR"); env && *env) return env;
  return "results";
}

template <class T, class F>
std::vector<T> parse_list(const std::string& text, F&& one) {
  std::vector<T> out;
  for (const auto& item : split(text, ',')) {
    const auto s = trim(item);
    if (!s.empty()) out.push_back(one(s));
  }
  return out;
}

double number(std::string_view s) {
  const auto v = parse_double(s);
  if (!v) throw ConfigError("bad number '" + std::string(s) + "'");
  return *v;
}

std::uint64_t seed_value(std::string_view s) {
  const auto v = parse_int(s);
  if (!v || *v < 0) throw ConfigError("bad seed '" + std::string(s) + "'");
  return static_cast<std::uint64_t>(*v);
}

std::string metrics_table(const std::vector<MetricsReport>& rows) {
  std::string s = std::string(kMetricsHeader) + "\n";
  for (const auto& m : rows) s += metrics_row(m) + "\n";
  return s;
}

int gen_traces(const Common& common) {
  const auto cfg = load_config(common);
  const auto dir = out_dir(common);
  fs::create_directories(dir);
  const auto cohort = make_cohort(cfg);
  const auto csv = dir / "traces.csv";
  write_traces(csv, cohort, cfg.grid);
  std::cout << "wrote " << cohort.size() << " viewers to " << csv.string() << "\n";
  return kOk;
}

int simulate(const Common& common, const std::string& policies, bool logs) {
  auto cfg = load_config(common);
  const auto kinds = policies.empty() ? std::vector<PolicyKind>{cfg.policy} : parse_list<PolicyKind>(policies, parse_policy);
  const auto dir = out_dir(common);
  const auto w = build_workload(cfg);
  std::vector<MetricsReport> reports;
  for (auto k : kinds) {
    cfg.policy = k;
    ReplayOptions opt;
    opt.keep_logs = logs;
    const auto r = replay(w, cfg, opt);
    if (logs) write_run_dir(dir / run_dir_name(cfg), cfg, w.cohort, r);
    reports.push_back(r.report);
  }
  const auto table = metrics_table(reports);
  write_file_atomic(dir / "metrics.csv", table);
  std::cout << table;
  return kOk;
}

int run_sweep(const Common& common, const std::string& axis, const std::string& values, const std::string& policies,
              const std::string& seeds, unsigned threads, bool logs) {
  const auto cfg = load_config(common);
  const auto ax = parse_axis(axis);
  const auto vals = parse_list<double>(values, number);
  const auto kinds = policies.empty() ? std::vector<PolicyKind>{cfg.policy} : parse_list<PolicyKind>(policies, parse_policy);
  const auto seed_list = seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : parse_list<std::uint64_t>(seeds, seed_value);
  const auto dir = out_dir(common);
  const auto points = sweep(cfg, ax, vals, kinds, seed_list, threads, logs);
  std::vector<MetricsReport> reports;
  std::vector<std::vector<ViewerTrace>> cohorts;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (logs) {
      // cohort depends on the seed only
      if (i == 0 || p.config.seed != points[i - 1].config.seed) cohorts.push_back(make_cohort(p.config));
      write_run_dir(dir / run_dir_name(p.config), p.config, cohorts.back(), p.result);
    }
    reports.push_back(p.result.report);
  }
  const auto table = metrics_table(reports);
  write_file_atomic(dir / "sweep.csv", table);
  std::cout << table;
  return kOk;
}

int predict_eval(const Common& common, const std::string& predictors, const std::string& horizons, int stride) {
  const auto cfg = load_config(common);
  const auto kinds = parse_list<Predictor>(predictors, parse_predictor);
  const auto hs = parse_list<double>(horizons, number);
  if (kinds.empty() || hs.empty()) throw ConfigError("predict-eval needs predictors and horizons");
  const auto cohort = make_cohort(cfg);
  const FovModel model(cfg.grid, cfg.fov, cfg.raster_samples, cfg.prediction.calibration_step_deg);
  const CollaborativePredictor engine(model, cfg.prediction);
  const TruthTable truth(cohort, model.raster());
  std::string s = "predictor,horizon_s,overlap_ratio,l2_loss,samples,seed\n";
  for (auto k : kinds)
    for (const auto& r : evaluate_predictors(cohort, k, hs, engine, truth, {stride}))
      s += std::string(to_string(r.predictor)) + "," + format_double(r.horizon_s) + "," + format_double(r.overlap_ratio) + "," +
           format_double(r.l2_loss) + "," + std::to_string(r.samples) + "," + std::to_string(cfg.seed) + "\n";
  write_file_atomic(out_dir(common) / "predict_eval.csv", s);
  std::cout << s;
  return kOk;
}

int report(const std::string& in, const std::string& out, bool svg) {
  const auto runs = scan_results(in);
  const auto tables = build_report(runs);
  const fs::path dir = out.empty() ? fs::path(in) / "report" : fs::path(out);
  write_report(dir, tables, svg);
  std::cout << "report over " << runs.size() << " runs in " << dir.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Predictive edge caching simulator for live tiled 360 video"};
  app.require_subcommand(1);

  Common common;
  auto* gen = app.add_subcommand("gen-traces", "synthesize a viewer cohort and write trace CSV");
  add_common(gen, common);

  std::string policies;
  bool no_logs = false;
  auto* sim = app.add_subcommand("simulate", "run one workload against one or more policies");
  add_common(sim, common);
  sim->add_option("-p,--policy", policies, "comma separated policies");
  sim->add_flag("--no-logs", no_logs, "skip per-run access and interest logs");

  std::string axis = "capacity", values, seeds;
  unsigned threads = 0;
  auto* sw = app.add_subcommand("sweep", "cross product of axis values, policies and seeds");
  add_common(sw, common);
  sw->add_option("--axis", axis, "capacity or td_scale")->capture_default_str();
  sw->add_option("--values", values, "comma separated axis values")->required();
  sw->add_option("-p,--policy", policies, "comma separated policies");
  sw->add_option("--seeds", seeds, "comma separated seeds");
  sw->add_option("-j,--threads", threads, "worker threads (0 = all cores)");
  sw->add_flag("--no-logs", no_logs, "skip per-run access and interest logs");

  std::string predictors = "tlp,colpb,colp-long,ground-truth", horizons = "1,2,3,4,5,6,8,10";
  int stride = 1;
  auto* pe = app.add_subcommand("predict-eval", "overlap and L2 loss of FoV predictors per horizon");
  add_common(pe, common);
  pe->add_option("--predictor", predictors, "comma separated predictors")->capture_default_str();
  pe->add_option("--horizons", horizons, "comma separated horizons in seconds")->capture_default_str();
  pe->add_option("--stride", stride, "evaluate every n-th segment")->check(CLI::PositiveNumber);

  std::string in, rep_out;
  bool svg = false;
  auto* rep = app.add_subcommand("report", "recompute figure tables from run directories");
  rep->add_option("results", in, "results directory")->required();
  rep->add_option("-o,--out", rep_out, "output directory (default <results>/report)");
  rep->add_flag("--svg", svg, "also render SVG line charts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc == 0) return kOk;
    std::cerr << app.help();
    return kUsage;
  }

  try {
    if (*gen) return gen_traces(common);
    if (*sim) return simulate(common, policies, !no_logs);
    if (*sw) return run_sweep(common, axis, values, policies, seeds, threads, !no_logs);
    if (*pe) return predict_eval(common, predictors, horizons, stride);
    if (*rep) return report(in, rep_out, svg);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kConfig;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
