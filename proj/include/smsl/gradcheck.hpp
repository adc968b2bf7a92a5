#pragma once

#include <algorithm>
#include <span>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "smsl/autodiff.hpp"

namespace smsl {

struct CoordinateRef {
  std::size_t tensor = 0;  // index into the parameter list
  std::string name;
  std::size_t flat = 0;  // row-major index inside the tensor
};

struct GradCheckReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::size_t n_params_checked = 0;
  std::size_t n_skipped = 0;
  double tolerance = 0.0;
  bool passed = true;
  std::optional<CoordinateRef> failing_coordinate;  // worst coordinate when failed
  std::vector<CoordinateRef> skipped;               // coordinates next to a kink

  /// One key=value pair per line.
  std::string to_text() const {
    std::ostringstream os;
    os.precision(6);
    os << std::scientific;
    os << "max_abs_err=" << max_abs_err << '\n'
       << "max_rel_err=" << max_rel_err << '\n'
       << "tolerance=" << tolerance << '\n'
       << "n_params_checked=" << n_params_checked << '\n'
       << "n_skipped=" << n_skipped << '\n'
       << "passed=" << (passed ? 1 : 0) << '\n';
    if (failing_coordinate) {
      os << "failing_coordinate=" << failing_coordinate->name << '[' << failing_coordinate->flat << "]\n";
    }
    return os.str();
  }
};

struct GradCheckOptions {
  double h_rel = 1e-6;  // step is h_rel * max(1, |theta_i|)
  double tol = 1e-5;
  std::uint64_t seed = 0;
  std::size_t samples = 500;          // sampled coordinates from large tensors
  std::size_t small_tensor = 64;      // tensors below this size are checked exhaustively
};

struct NamedTensor {
  std::string name;
  Tensor<double> value;
};

/// Scalar function of parameter leaves recorded on a tape.
using TapedScalarFn = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

namespace detail {

struct Evaluation {
  double value;
  std::vector<std::int64_t> signature;
};

inline Evaluation evaluate(const TapedScalarFn& f, const std::vector<NamedTensor>& params) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (const auto& p : params) leaves.push_back(tape.leaf(p.value));
  const Var<double> root = f(tape, leaves);
  if (root.value().size() != 1) throw ContractError("gradcheck function must return a scalar");
  return {root.value()[0], tape.kink_signature()};
}

inline std::vector<CoordinateRef> choose_coordinates(const std::vector<NamedTensor>& params,
                                                     const GradCheckOptions& opt) {
  std::vector<CoordinateRef> chosen, pool;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& dst = params[t].value.size() < opt.small_tensor ? chosen : pool;
    for (std::size_t i = 0; i < params[t].value.size(); ++i) dst.push_back({t, params[t].name, i});
  }
  // Partial Fisher-Yates over the large-tensor pool with a seeded mt19937_64.
  std::mt19937_64 rng(opt.seed);
  const std::size_t take = std::min(opt.samples, pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(take);
  std::sort(pool.begin(), pool.end(), [](const CoordinateRef& a, const CoordinateRef& b) {
    return a.tensor != b.tensor ? a.tensor < b.tensor : a.flat < b.flat;
  });
  chosen.insert(chosen.end(), pool.begin(), pool.end());
  return chosen;
}

}  // namespace detail

/// Compares tape gradients of `f` against central differences on a seeded
/// coordinate subset. Error per coordinate is |g - n| / max(1, |g|, |n|);
/// coordinates whose +-h evaluations land on a different ReLU / max-pool
/// piece than the base point are skipped and listed.
inline GradCheckReport gradcheck(const TapedScalarFn& f, std::vector<NamedTensor> params,
                                 const GradCheckOptions& opt) {
  if (!(opt.h_rel > 0.0)) throw ConfigError("gradcheck step must be > 0");

  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (const auto& p : params) leaves.push_back(tape.leaf(p.value));
  const Var<double> root = f(tape, leaves);
  const Gradients<double> grads = tape.backward(root);
  const auto base_sig = tape.kink_signature();

  GradCheckReport rep;
  rep.tolerance = opt.tol;
  double worst = -1.0;
  for (const CoordinateRef& c : detail::choose_coordinates(params, opt)) {
    double& theta = params[c.tensor].value.mutable_data()[c.flat];
    const double saved = theta;
    const double h = opt.h_rel * std::max(1.0, std::abs(saved));
    theta = saved + h;
    const auto plus = detail::evaluate(f, params);
    theta = saved - h;
    const auto minus = detail::evaluate(f, params);
    theta = saved;
    if (!std::isfinite(plus.value) || !std::isfinite(minus.value)) {
      throw NumericError("non-finite function value at " + c.name + "[" + std::to_string(c.flat) + "]");
    }
    if (plus.signature != base_sig || minus.signature != base_sig) {
      rep.skipped.push_back(c);
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * h);
    const double analytic = grads[leaves[c.tensor]][c.flat];
    const double abs_err = std::abs(analytic - numeric);
    const double rel_err = abs_err / std::max({1.0, std::abs(analytic), std::abs(numeric)});
    rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
    if (rel_err > worst) {
      worst = rel_err;
      rep.failing_coordinate = c;
    }
    rep.max_rel_err = std::max(rep.max_rel_err, rel_err);
    ++rep.n_params_checked;
  }
  rep.n_skipped = rep.skipped.size();
  rep.passed = rep.max_rel_err <= opt.tol;
  if (rep.passed) rep.failing_coordinate.reset();
  return rep;
}

}  // namespace smsl
