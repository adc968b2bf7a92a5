// smsl: command-line driver for the selective multi-scale neck.
//
// Exit codes: 0 success, 1 a check failed, 2 usage or I/O error. Results go
// to stdout as key=value lines; failures print "error=<reason> message=..."
// on stderr.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "smsl/checks.hpp"
#include "smsl/io.hpp"
#include "smsl/neck.hpp"
#include "smsl/params.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

struct RunConfig {
  std::size_t L = 5;
  std::size_t C = 256;
  std::size_t r = 8;
  std::size_t size = 16;
  std::uint64_t seed = 0;
  std::string dtype = "f64";
  std::string params_dir;
  std::string input_dir;
  std::string out_dir;
  double tol = 1e-5;
  double abs_tol = 1e-10;
  double rel_tol = 1e-8;
  std::size_t samples = 500;
  std::size_t iters = 30;
  unsigned threads = 1;
  bool extra_convs = false;
  bool zeros = false;
};

int fail(const char* reason, const std::string& message, int code) {
  std::cerr << "error=" << reason << " message=" << message << '\n';
  return code;
}

smsl::checks::Workload workload(const RunConfig& rc) { return {rc.L, rc.C, rc.r, rc.size, rc.seed}; }

int cmd_init_params(const RunConfig& rc) {
  if (rc.dtype == "f32") {
    smsl::io::save_params(rc.out_dir, smsl::init_params<float>(rc.L, rc.C, rc.r, rc.seed, rc.extra_convs));
  } else {
    smsl::io::save_params(rc.out_dir, smsl::init_params<double>(rc.L, rc.C, rc.r, rc.seed, rc.extra_convs));
  }
  std::cout << "params=" << rc.out_dir << "\nL=" << rc.L << "\nC=" << rc.C << "\nr=" << rc.r << "\nseed=" << rc.seed
            << "\ndtype=" << rc.dtype << "\ntotal=" << smsl::count_params(rc.L, rc.C, rc.r, rc.extra_convs).total << '\n';
  return kOk;
}

template <typename T>
void write_random_input(const RunConfig& rc) {
  auto levels = smsl::checks::random_levels<T>(rc.L, rc.C, rc.size, rc.size, rc.seed);
  if (rc.zeros) {
    for (auto& f : levels.features) f = smsl::Tensor<T>::zeros(f.shape());
  }
  smsl::io::save_levels(rc.out_dir, levels);
}

int cmd_make_input(const RunConfig& rc) {
  if (rc.dtype == "f32") {
    write_random_input<float>(rc);
  } else {
    write_random_input<double>(rc);
  }
  std::cout << "input=" << rc.out_dir << "\nlevels=" << rc.L << "\nC=" << rc.C << "\nsize=" << rc.size << '\n';
  return kOk;
}

template <typename T>
int forward_as(const RunConfig& rc) {
  const auto levels = smsl::io::load_levels<T>(rc.input_dir);
  const auto params = smsl::io::load_params<T>(rc.params_dir);
  const auto cfg = smsl::default_config(levels, params.r);
  smsl::ForwardOptions<T> opt;
  opt.threads = rc.threads;
  const auto out = smsl::smsl_forward(levels, params, cfg, opt);
  smsl::io::save_levels(rc.out_dir, out);
  std::cout << "output=" << rc.out_dir << "\nl_min=" << out.l_min << "\nl_max=" << out.l_max()
            << "\ngather_level=" << cfg.gather_level << "\ndtype=" << smsl::dtype_name(smsl::dtype_of<T>()) << '\n';
  return kOk;
}

int cmd_forward(const RunConfig& rc) {
  return smsl::io::levels_dtype(rc.input_dir) == smsl::DType::F32 ? forward_as<float>(rc) : forward_as<double>(rc);
}

int cmd_gradcheck(const RunConfig& rc) {
  const auto rep = smsl::checks::smsl_gradcheck(workload(rc), rc.tol, rc.samples);
  std::cout << rep.to_text();
  return rep.passed ? kOk : kCheckFailed;
}

int cmd_oracle_diff(const RunConfig& rc) {
  const auto run = smsl::checks::oracle_diff(workload(rc), rc.abs_tol, rc.rel_tol);
  double col = 0.0;
  for (const auto& a : run.trace.attention) col = std::max(col, smsl::checks::attention_column_error(a));
  std::cout << run.diff.to_text() << "attention_column_err=" << col << '\n';
  return run.diff.passed ? kOk : kCheckFailed;
}

int cmd_param_audit(const RunConfig& rc) {
  const auto n = smsl::count_params(rc.L, rc.C, rc.r, rc.extra_convs);
  std::cout << "L=" << rc.L << "\nC=" << rc.C << "\nr=" << rc.r << "\ncr=" << n.cr << "\nsfc_branch=" << n.sfc_branch
            << "\nsfc_local=" << n.sfc_local << "\nsfc_global=" << n.sfc_global << "\nnonlocal=" << n.nonlocal
            << "\nextra=" << n.extra << "\ntotal=" << n.total << '\n';
  return kOk;
}

template <typename T>
int bench_as(const RunConfig& rc) {
  using clock = std::chrono::steady_clock;
  const auto params = smsl::init_params<T>(rc.L, rc.C, rc.r, rc.seed, false);
  const auto levels = smsl::checks::random_levels<T>(rc.L, rc.C, rc.size, rc.size, smsl::checks::input_seed(rc.seed));
  const auto cfg = smsl::default_config(levels, rc.r);
  const auto reference = smsl::smsl_forward(levels, params, cfg);
  constexpr std::size_t kWarmup = 5;
  const std::size_t iters = std::max<std::size_t>(rc.iters, 30);

  std::vector<std::vector<double>> latencies(rc.threads);
  std::vector<int> deterministic(rc.threads, 1);
  const auto t0 = clock::now();
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < rc.threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = 0; i < kWarmup + iters; ++i) {
        const auto start = clock::now();
        const auto out = smsl::smsl_forward(levels, params, cfg);
        const auto stop = clock::now();
        if (i >= kWarmup) latencies[w].push_back(std::chrono::duration<double, std::milli>(stop - start).count());
        for (std::size_t l = 0; l < out.count(); ++l) {
          if (!smsl::bit_equal(out.features[l], reference.features[l])) deterministic[w] = 0;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  const double wall = std::chrono::duration<double>(clock::now() - t0).count();

  std::vector<double> all;
  for (const auto& v : latencies) all.insert(all.end(), v.begin(), v.end());
  std::sort(all.begin(), all.end());
  auto quantile = [&](double q) {
    return all[std::min(all.size() - 1, static_cast<std::size_t>(q * static_cast<double>(all.size() - 1) + 0.5))];
  };
  const bool det = std::all_of(deterministic.begin(), deterministic.end(), [](int d) { return d == 1; });
  std::cout << "dtype=" << smsl::dtype_name(smsl::dtype_of<T>()) << "\nthreads=" << rc.threads << "\niters=" << iters
            << "\nwarmup=" << kWarmup << "\nmedian_ms=" << quantile(0.5) << "\np95_ms=" << quantile(0.95)
            << "\nthroughput_per_s=" << static_cast<double>(rc.threads * (kWarmup + iters)) / wall
            << "\ndeterministic=" << (det ? 1 : 0) << '\n';
  return det ? kOk : kCheckFailed;
}

int cmd_bench(const RunConfig& rc) {
  if (rc.threads == 0) throw smsl::ConfigError("--threads must be >= 1");
  return rc.dtype == "f64" ? bench_as<double>(rc) : bench_as<float>(rc);
}

int cmd_selftest() {
  bool ok = true;
  for (const auto& c : smsl::checks::run_selftest()) {
    std::cout << "check." << c.name << '=' << (c.passed ? "pass" : "fail") << ' ' << c.detail << '\n';
    ok = ok && c.passed;
  }
  std::cout << "passed=" << (ok ? 1 : 0) << '\n';
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selective multi-scale learning neck: forwards, gradient checks, oracle diffs, audits"};
  app.require_subcommand(1);
  RunConfig rc;

  auto shape_opts = [&](CLI::App* sub, bool with_size) {
    sub->add_option("--L", rc.L, "number of pyramid levels")->check(CLI::Range(2, 16));
    sub->add_option("--C", rc.C, "channels per level")->check(CLI::PositiveNumber);
    sub->add_option("--r", rc.r, "reduction ratio")->check(CLI::PositiveNumber);
    if (with_size) sub->add_option("--size", rc.size, "height and width of the finest level")->check(CLI::PositiveNumber);
  };
  auto dtype_opt = [&](CLI::App* sub) {
    sub->add_option("--dtype", rc.dtype, "element type")->check(CLI::IsMember({"f32", "f64"}));
  };

  auto* init = app.add_subcommand("init-params", "write a seeded parameter directory");
  shape_opts(init, false);
  init->add_option("--seed", rc.seed);
  init->add_option("--out", rc.out_dir)->required();
  init->add_flag("--extra-convs", rc.extra_convs, "include the C6/C7 generator convolutions");
  dtype_opt(init);

  auto* make_input = app.add_subcommand("make-input", "write a seeded random level set");
  shape_opts(make_input, true);
  make_input->add_option("--seed", rc.seed);
  make_input->add_option("--out", rc.out_dir)->required();
  make_input->add_flag("--zeros", rc.zeros, "write all-zero features");
  dtype_opt(make_input);

  auto* forward = app.add_subcommand("forward", "run the neck on a level set directory");
  forward->add_option("--params", rc.params_dir)->required();
  forward->add_option("--input", rc.input_dir)->required();
  forward->add_option("--out", rc.out_dir)->required();
  forward->add_option("--threads", rc.threads)->check(CLI::PositiveNumber);

  auto* grad = app.add_subcommand("gradcheck", "central-difference check of all parameter gradients (f64)");
  shape_opts(grad, true);
  grad->add_option("--seed", rc.seed);
  grad->add_option("--tol", rc.tol);
  grad->add_option("--samples", rc.samples);

  auto* odiff = app.add_subcommand("oracle-diff", "compare the neck with the naive reference (f64)");
  shape_opts(odiff, true);
  odiff->add_option("--seed", rc.seed);
  odiff->add_option("--abs-tol", rc.abs_tol);
  odiff->add_option("--rel-tol", rc.rel_tol);

  auto* audit = app.add_subcommand("param-audit", "itemized parameter count");
  shape_opts(audit, false);
  audit->add_flag("--extra-convs", rc.extra_convs);

  auto* bench = app.add_subcommand("bench", "latency and throughput of concurrent forwards");
  shape_opts(bench, true);
  bench->add_option("--iters", rc.iters, "timed iterations per thread (minimum 30)");
  bench->add_option("--threads", rc.threads)->check(CLI::PositiveNumber);
  bench->add_option("--seed", rc.seed);
  bench->add_option("--dtype", rc.dtype)->check(CLI::IsMember({"f32", "f64"}))->default_str("f32");

  auto* selftest = app.add_subcommand("selftest", "run the property suite");

  // bench defaults to f32; every other command to f64.
  bench->preparse_callback([&](std::size_t) { rc.dtype = "f32"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kUsage);
  }

  try {
    if (*init) return cmd_init_params(rc);
    if (*make_input) return cmd_make_input(rc);
    if (*forward) return cmd_forward(rc);
    if (*grad) return cmd_gradcheck(rc);
    if (*odiff) return cmd_oracle_diff(rc);
    if (*audit) return cmd_param_audit(rc);
    if (*bench) return cmd_bench(rc);
    if (*selftest) return cmd_selftest();
  } catch (const smsl::NumericError& e) {
    return fail(e.reason(), e.what(), kCheckFailed);
  } catch (const smsl::Error& e) {
    return fail(e.reason(), e.what(), kUsage);
  } catch (const fs::filesystem_error& e) {
    return fail("io", e.what(), kUsage);
  }
  return kUsage;
}
