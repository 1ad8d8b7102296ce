#ifndef P2PL_BENCH_HPP
#define P2PL_BENCH_HPP

// Subcommands of the p2pl_bench tool. Each takes a plain config struct so
// tests can drive them without going through argument parsing. Requires
// nlohmann/json on the include path.

#include <p2pl/alloc_stats.hpp>
#include <p2pl/correspond.hpp>
#include <p2pl/error.hpp>
#include <p2pl/grad.hpp>
#include <p2pl/gradcheck.hpp>
#include <p2pl/io.hpp>
#include <p2pl/metrics.hpp>
#include <p2pl/parallel.hpp>
#include <p2pl/solver.hpp>
#include <p2pl/synth.hpp>

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace p2pl::bench {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitStrict = 2;

inline std::string pair_dir_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "pair_%04zu", i);
  return buf;
}

/// Writes run_config.json. The worker count is deliberately left out so the
/// echo is identical across thread counts.
inline void write_run_config(const fs::path& dir, const nlohmann::ordered_json& cfg) {
  fs::create_directories(dir);
  auto out = io::detail::open_out(dir / "run_config.json");
  out << cfg.dump(2) << '\n';
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream s;
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
  return s.str();
}

// ------------------------------------------------------------------- synth

struct SynthCommand {
  std::size_t pairs = 10;
  std::uint64_t seed = 0;
  std::string shape = "mixed";  // cube|sphere|torus|blob|mixed
  std::size_t n_points = 1024;
  std::size_t n_partial = 768;
  double rot_max_deg = 45.0;
  double trans_max = 0.5;
  std::size_t compose = 3;
  fs::path out = "synth_out";
  unsigned threads = 0;

  nlohmann::ordered_json to_json() const {
    return {{"command", "synth"},      {"pairs", pairs},         {"seed", seed},
            {"shape", shape},          {"n_points", n_points},   {"n_partial", n_partial},
            {"rot_max_deg", rot_max_deg}, {"trans_max", trans_max}, {"compose", compose}};
  }
};

/// Pair i of a synth run. Shapes carry 2 * n_points samples so the two
/// unduplicated draws fit.
inline RegistrationPair synth_pair(const SynthCommand& cfg, std::size_t i) {
  const Rng pair_rng = Rng(cfg.seed).split(i);
  std::vector<PointCloud> shapes;
  for (std::size_t k = 0; k < cfg.compose; ++k) {
    ShapeKind kind;
    if (cfg.shape == "mixed") {
      Rng pick = pair_rng.split(100 + k);
      kind = static_cast<ShapeKind>(pick.index(4));
    } else {
      kind = parse_shape_kind(cfg.shape);
    }
    shapes.push_back(synth_shape(kind, 2 * cfg.n_points, pair_rng.split(200 + k).seed()));
  }
  SynthConfig sc;
  sc.seed = pair_rng.seed();
  sc.n_sample = cfg.n_points;
  sc.n_partial = cfg.n_partial;
  sc.rot_max_deg = cfg.rot_max_deg;
  sc.trans_max = cfg.trans_max;
  sc.compose_count = cfg.compose;
  return make_cpu_pair(shapes, sc);
}

inline void write_pair(const fs::path& dir, const RegistrationPair& pair) {
  fs::create_directories(dir);
  io::save(dir / "source.ply", pair.source);
  io::save(dir / "target.ply", pair.target);
  if (pair.gt) io::save_transform(dir / "gt.txt", *pair.gt);
  if (pair.clean_source) io::save(dir / "clean_source.ply", *pair.clean_source);
  if (pair.clean_target) io::save(dir / "clean_target.ply", *pair.clean_target);
}

inline int cmd_synth(const SynthCommand& cfg) {
  if (cfg.shape != "mixed") (void)parse_shape_kind(cfg.shape);
  if (cfg.compose == 0) throw std::invalid_argument("--compose must be positive");
  write_run_config(cfg.out, cfg.to_json());
  parallel_for(cfg.pairs, resolve_threads(cfg.threads),
               [&](std::size_t i) { write_pair(cfg.out / pair_dir_name(i), synth_pair(cfg, i)); });
  return kExitOk;
}

inline RegistrationPair load_pair(const fs::path& dir) {
  RegistrationPair pair;
  pair.source = io::load(dir / "source.ply");
  pair.target = io::load(dir / "target.ply");
  if (fs::exists(dir / "gt.txt")) pair.gt = io::load_transform(dir / "gt.txt");
  if (fs::exists(dir / "clean_source.ply")) pair.clean_source = io::load(dir / "clean_source.ply");
  if (fs::exists(dir / "clean_target.ply")) pair.clean_target = io::load(dir / "clean_target.ply");
  return pair;
}

/// A directory holding source.ply is one pair; otherwise its subdirectories
/// holding source.ply are, in name order.
inline std::vector<fs::path> discover_pairs(const fs::path& in) {
  if (!fs::is_directory(in)) throw Error("input directory not found: " + in.string());
  if (fs::exists(in / "source.ply")) return {in};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(in))
    if (e.is_directory() && fs::exists(e.path() / "source.ply")) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Error("no pairs under " + in.string());
  return out;
}

// ---------------------------------------------------------------- register

struct RegisterCommand {
  fs::path in;
  std::string method = "p2pl";
  int inner_iters = 10;
  int outer_iters = 30;
  std::optional<fs::path> weights;
  std::size_t estimate_normals = 0;  // k; 0 keeps file normals
  bool consistent_normals = false;
  double damping = 0.0;
  bool strict = false;
  fs::path out = "register_out";
  unsigned threads = 0;

  nlohmann::ordered_json to_json() const {
    return {{"command", "register"},
            {"in", in.string()},
            {"method", method},
            {"inner_iters", inner_iters},
            {"outer_iters", outer_iters},
            {"weights", weights ? nlohmann::ordered_json(weights->string()) : nlohmann::ordered_json()},
            {"estimate_normals", estimate_normals},
            {"consistent_normals", consistent_normals},
            {"damping", damping},
            {"strict", strict}};
  }
};

inline const char* error_code(const std::exception& e) {
  if (const auto* p = dynamic_cast<const Error*>(&e)) return p->code();
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid_argument";
  return "error";
}

inline double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

/// Registers one pair. Failures come back as a row with an error status.
inline MetricRow register_pair(const RegisterCommand& cfg, const fs::path& dir, std::size_t index,
                               const std::optional<std::vector<double>>& weights) {
  MetricRow row;
  row.case_id = dir.filename().string();
  try {
    RegistrationPair pair = load_pair(dir);
    if (cfg.estimate_normals > 0) {
      const auto sign = cfg.consistent_normals ? NormalSign::consistent : NormalSign::random;
      pair.target = estimate_normals(pair.target, cfg.estimate_normals, Rng(index).split(1).seed(), sign).cloud;
    }
    IcpOptions opt;
    opt.method = parse_method(cfg.method);
    opt.inner_iters = cfg.inner_iters;
    opt.max_outer = cfg.outer_iters;
    opt.damping = cfg.damping;
    opt.weights = weights;

    const auto t0 = std::chrono::steady_clock::now();
    const IcpReport rep = icp(pair.source, pair.target, opt);
    row.fwd_ms = ms_since(t0);
    io::save_transform(fs::path(cfg.out) / row.case_id / "estimate.txt", rep.transform);

    if (pair.target.has_normals()) {
      try {
        const auto t1 = std::chrono::steady_clock::now();
        (void)backward(rep.last_correspondences, pair.source.positions, to_gvector(rep.transform));
        row.bwd_ms = ms_since(t1);
      } catch (const SingularHessian&) {
        // the forward result stands; bwd_ms stays NaN
      }
    }

    row.chamfer = chamfer(rep.transform, pair);
    if (!pair.gt) {
      row.status = "no_gt";
      return row;
    }
    const RotationErrors re = rotation_errors(rep.transform, *pair.gt);
    row.euler_residual_deg = re.euler_residual_deg;
    row.euler_gt_deg = re.euler_gt_deg;
    row.geodesic_deg = re.geodesic_deg;
    row.translation_residual = rep.transform.translation - pair.gt->translation;
    row.translation_gt = pair.gt->translation;
    if (re.gimbal_lock) row.status = "gimbal_lock";
  } catch (const std::exception& e) {
    row.status = error_code(e);
  }
  return row;
}

inline MetricReport run_register(const RegisterCommand& cfg) {
  (void)parse_method(cfg.method);
  const auto dirs = discover_pairs(cfg.in);
  std::optional<std::vector<double>> weights;
  if (cfg.weights) weights = io::load_values(*cfg.weights);
  for (const auto& d : dirs) fs::create_directories(cfg.out / d.filename());
  std::vector<MetricRow> rows(dirs.size());
  parallel_for(dirs.size(), resolve_threads(cfg.threads),
               [&](std::size_t i) { rows[i] = register_pair(cfg, dirs[i], i, weights); });
  return summarize(std::move(rows));
}

inline int cmd_register(const RegisterCommand& cfg) {
  write_run_config(cfg.out, cfg.to_json());
  const MetricReport rep = run_register(cfg);
  {
    auto out = io::detail::open_out(cfg.out / "metrics.csv");
    write_metric_header(out);
    for (const auto& r : rep.rows) write_metric_row(out, r);
  }
  {
    auto out = io::detail::open_out(cfg.out / "summary.csv");
    write_summary(out, rep);
  }
  const bool failed = std::any_of(rep.rows.begin(), rep.rows.end(),
                                  [](const MetricRow& r) {
                                    return r.status != "ok" && r.status != "no_gt" && r.status != "gimbal_lock";
                                  });
  return cfg.strict && failed ? kExitStrict : kExitOk;
}

// --------------------------------------------------------------- gradcheck

struct GradcheckCommand {
  std::size_t n = 64;
  std::size_t cases = 50;
  std::vector<int> iters = {1, 2, 5, 10};
  double fd_step = 1e-5;
  std::uint64_t seed = 0;
  fs::path out = "gradcheck_out";
  unsigned threads = 0;

  nlohmann::ordered_json to_json() const {
    return {{"command", "gradcheck"}, {"n", n},       {"cases", cases},
            {"iters", iters},         {"fd_step", fd_step}, {"seed", seed}};
  }
};

struct GradcheckResult {
  std::vector<int> iters;
  /// reports[j][c]: iteration setting j, case c.
  std::vector<std::vector<GradErrorReport>> reports;

  double mean_rel_mse(std::size_t j) const {
    CompensatedSum s;
    for (const auto& r : reports[j]) s.add(r.rel_mse);
    return reports[j].empty() ? 0.0 : s.value() / static_cast<double>(reports[j].size());
  }
};

inline GradcheckInstance gradcheck_instance(const GradcheckCommand& cfg, std::size_t c) {
  return make_gradcheck_instance(Rng(cfg.seed).split(c).seed(), cfg.n);
}

inline GradcheckResult run_gradcheck(const GradcheckCommand& cfg) {
  if (cfg.n < 8) throw std::invalid_argument("--n must be at least 8");
  for (int it : cfg.iters)
    if (it < 1) throw std::invalid_argument("--iters entries must be >= 1");
  GradcheckResult res;
  res.iters = cfg.iters;
  res.reports.assign(cfg.iters.size(), std::vector<GradErrorReport>(cfg.cases));
  const std::size_t total = cfg.iters.size() * cfg.cases;
  parallel_for(total, resolve_threads(cfg.threads), [&](std::size_t item) {
    const std::size_t j = item / std::max<std::size_t>(cfg.cases, 1);
    const std::size_t c = item % std::max<std::size_t>(cfg.cases, 1);
    try {
      FDConfig fd;
      fd.step = cfg.fd_step;
      fd.n_iters_forward = cfg.iters[j];
      res.reports[j][c] = run_gradcheck_case(gradcheck_instance(cfg, c), fd);
    } catch (const std::exception& e) {
      throw Error("gradcheck instance " + std::to_string(c) + " (iters " + std::to_string(cfg.iters[j]) +
                  "): " + e.what());
    }
  });
  return res;
}

inline int cmd_gradcheck(const GradcheckCommand& cfg) {
  write_run_config(cfg.out, cfg.to_json());
  const GradcheckResult res = run_gradcheck(cfg);
  {
    auto out = io::detail::open_out(cfg.out / "gradcheck.csv");
    write_gradcheck_header(out);
    for (const auto& setting : res.reports)
      for (std::size_t c = 0; c < setting.size(); ++c) write_gradcheck_rows(out, c, setting[c]);
  }
  auto out = io::detail::open_out(cfg.out / "gradcheck_summary.csv");
  out << "n_iters,mean_rel_mse,max_rel_mse,mean_rel_mse_x,mean_rel_mse_y,mean_rel_mse_n,mean_rel_mse_zeta\n";
  for (std::size_t j = 0; j < res.iters.size(); ++j) {
    double mx = 0.0;
    std::array<CompensatedSum, 4> kinds;
    for (const auto& r : res.reports[j]) {
      mx = std::max(mx, r.rel_mse);
      for (int k = 0; k < 4; ++k) kinds[k].add(r.per_kind[k].rel_mse);
    }
    const double count = static_cast<double>(std::max<std::size_t>(res.reports[j].size(), 1));
    out << res.iters[j] << ',' << io::detail::fmt(res.mean_rel_mse(j)) << ',' << io::detail::fmt(mx);
    for (auto& s : kinds) out << ',' << io::detail::fmt(s.value() / count);
    out << '\n';
  }
  return kExitOk;
}

// ------------------------------------------------------------------- bench

struct BenchCommand {
  std::size_t n_points = 1024;
  std::vector<int> iters_list = {1, 2, 5, 10, 20};
  int reps = 20;
  int fd_reps = 1;
  std::uint64_t seed = 0;
  fs::path out = "bench_out";

  nlohmann::ordered_json to_json() const {
    return {{"command", "bench"}, {"n_points", n_points}, {"iters_list", iters_list},
            {"reps", reps},       {"fd_reps", fd_reps},   {"seed", seed}};
  }
};

struct BenchRow {
  std::string phase;  // forward | backward_analytic | backward_fd
  int n_iters = 0;
  int reps = 0;
  double median_ms = 0.0;
  double min_ms = 0.0;
  std::size_t peak_bytes = 0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// `reps` timed calls, preceded by one untimed warm-up call when `warmup`.
/// Peak bytes come from the first call made.
template <class Fn>
BenchRow time_phase(const std::string& phase, int n_iters, int reps, bool warmup, Fn&& fn) {
  BenchRow row;
  row.phase = phase;
  row.n_iters = n_iters;
  row.reps = reps;
  std::vector<double> t;
  for (int r = warmup ? -1 : 0; r < reps; ++r) {
    const bool first = r == (warmup ? -1 : 0);
    std::optional<alloc::PeakScope> scope;
    if (first) scope.emplace();
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double ms = ms_since(t0);
    if (first) row.peak_bytes = scope->peak_bytes();
    if (r >= 0) t.push_back(ms);
  }
  row.median_ms = median(t);
  row.min_ms = t.empty() ? 0.0 : *std::min_element(t.begin(), t.end());
  return row;
}

inline std::vector<BenchRow> run_bench(const BenchCommand& cfg) {
  if (cfg.reps < 1 || cfg.fd_reps < 0) throw std::invalid_argument("--reps must be >= 1");
  const GradcheckInstance inst = make_gradcheck_instance(cfg.seed, cfg.n_points);
  std::vector<BenchRow> rows;
  for (int iters : cfg.iters_list) {
    FDConfig fd;
    fd.n_iters_forward = iters;
    GVector g;
    rows.push_back(time_phase("forward", iters, cfg.reps, true, [&] { g = solve_g(inst.corr, inst.source, fd); }));
    rows.push_back(time_phase("backward_analytic", iters, cfg.reps, true,
                              [&] { (void)backward(inst.corr, inst.source, g); }));
    if (cfg.fd_reps > 0)
      rows.push_back(time_phase("backward_fd", iters, cfg.fd_reps, false,
                                [&] { (void)fd_bundle(inst.corr, inst.source, fd); }));
  }
  return rows;
}

inline int cmd_bench(const BenchCommand& cfg) {
  write_run_config(cfg.out, cfg.to_json());
  const auto rows = run_bench(cfg);
  auto out = io::detail::open_out(cfg.out / "bench.csv");
  out << "# peak_alloc_bytes: allocator-tracked peak heap bytes of one call"
      << (alloc::tracking_enabled() ? "" : " (tracking not linked: always 0)") << '\n';
  out << "phase,n_iters,n_points,reps,median_ms,min_ms,peak_alloc_bytes\n";
  for (const auto& r : rows)
    out << r.phase << ',' << r.n_iters << ',' << cfg.n_points << ',' << r.reps << ',' << io::detail::fmt(r.median_ms)
        << ',' << io::detail::fmt(r.min_ms) << ',' << r.peak_bytes << '\n';
  return kExitOk;
}

}  // namespace p2pl::bench

#endif  // P2PL_BENCH_HPP
