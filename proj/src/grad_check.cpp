#include "pv/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "pv/rng.hpp"

namespace pv {

namespace {

using Thunk = std::function<Tensor<double>()>;

double evaluate(const Thunk& f) {
  NoGradGuard<double> guard;
  const Tensor<double> y = f();
  if (y.numel() != 1) throw ShapeError("grad_check: function must return a scalar, got " + shape_str(y.shape()));
  return y.item();
}

// `param` is the tensor f reads; its values are perturbed in place.
GradCheckResult check(const Thunk& f, Tensor<double>& param, const GradCheckOptions& options) {
  const double h = options.step;
  if (!(h >= 1e-6 && h <= 1e-2)) throw std::invalid_argument("grad_check: step must lie in [1e-6, 1e-2]");

  const double first = evaluate(f);
  const double second = evaluate(f);
  if (std::memcmp(&first, &second, sizeof(double)) != 0) {
    throw std::runtime_error("grad_check: function is not deterministic");
  }

  const bool had_grad = param.requires_grad();
  param.set_requires_grad(true);
  param.zero_grad();
  std::vector<double> analytic(param.numel(), 0.0);
  {
    GradTape<double> tape;
    const Tensor<double> y = f();
    if (y.numel() != 1) throw ShapeError("grad_check: function must return a scalar");
    if (y.requires_grad()) {
      tape.backward(y);
      if (param.has_grad()) std::copy(param.grad().begin(), param.grad().end(), analytic.begin());
    }
  }
  param.zero_grad();
  param.set_requires_grad(had_grad);

  std::vector<std::size_t> coords(param.numel());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (options.max_coords > 0 && options.max_coords < coords.size()) {
    Rng rng(options.seed);
    for (std::size_t i = 0; i < options.max_coords; ++i) {
      std::swap(coords[i], coords[i + rng.index(coords.size() - i)]);
    }
    coords.resize(options.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckResult result;
  auto values = param.mutable_data();
  for (std::size_t i : coords) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = evaluate(f);
    values[i] = saved - h;
    const double down = evaluate(f);
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    const double err = std::abs(analytic[i] - numeric) / denom;
    if (err > result.max_rel_error || result.checked == 0) {
      result.max_rel_error = err;
      result.worst_index = i;
      result.analytic = analytic[i];
      result.numeric = numeric;
    }
    ++result.checked;
  }
  return result;
}

}  // namespace

GradCheckResult grad_check(const ScalarFunction& f, const Tensor<double>& x, const GradCheckOptions& options) {
  Tensor<double> probe = x.clone();
  return check([&] { return f(probe); }, probe, options);
}

GradCheckResult grad_check(const std::function<Tensor<double>()>& f, Tensor<double> param,
                           const GradCheckOptions& options) {
  return check(f, param, options);
}

}  // namespace pv
