#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "dtae/losses.hpp"
#include "dtae/nn/layers.hpp"

namespace dtae::testing {

// Central differences in double precision. Inputs near kinks are kept at
// least 1e-2 away, so the step never crosses one.
inline constexpr double kStep = 1e-5;
inline constexpr double kGradTolerance = 1e-4;

struct GradCheck {
  std::size_t trials = 0;
  std::size_t coords = 0;
  double max_rel = 0.0;  // after the rounding allowance; this is what passes or fails
  double max_raw = 0.0;  // plain |a − n| / max(|a|, |n|, 1e-8)
  std::string worst;

  void merge(const GradCheck& o) {
    trials += o.trials;
    coords += o.coords;
    max_raw = std::max(max_raw, o.max_raw);
    if (o.max_rel > max_rel || worst.empty()) {
      max_rel = std::max(max_rel, o.max_rel);
      if (!o.worst.empty()) worst = o.worst;
    }
  }
  bool ok(std::size_t min_trials = 20) const {
    return trials >= min_trials && coords > 0 && max_rel < kGradTolerance;
  }
};

// Perturbs every coordinate of `values` in turn and compares the central
// difference of f with `analytic`: |a − n| / max(|a|, |n|), floored at 1e-8 so
// two gradients that are both rounding noise around zero do not count.
inline void compare_coords(GradCheck& out, const std::string& what, std::vector<double>& values,
                           const std::vector<double>& analytic, const std::function<double()>& f) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    values[i] = v + kStep;
    const double fp = f();
    values[i] = v - kStep;
    const double fm = f();
    values[i] = v;
    // The difference quotient carries rounding error of order eps·max(|f|, 1)/h;
    // disagreement inside that band is not evidence of a wrong gradient.
    const double noise = 64 * std::numeric_limits<double>::epsilon() * std::max({std::abs(fp), std::abs(fm), 1.0}) / kStep;
    const double numeric = (fp - fm) / (2 * kStep);
    const double gap = std::max(0.0, std::abs(analytic[i] - numeric) - noise);
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    const double r = gap / scale;
    out.max_raw = std::max(out.max_raw, std::abs(analytic[i] - numeric) / scale);
    ++out.coords;
    if (r > out.max_rel) {
      out.max_rel = r;
      out.worst = what + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[i]) + " numeric " +
                  std::to_string(numeric);
    }
  }
}

inline void fill_normal(std::vector<double>& v, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  for (auto& x : v) x = d(rng);
}

// Values bounded away from zero, for inputs that pass through a ReLU kink.
inline void fill_away_from_zero(std::vector<double>& v, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
}

// Distinct values at least 0.05 apart, so no max-pool window has a near tie.
inline void fill_distinct(std::vector<double>& v, std::mt19937_64& rng) {
  std::vector<double> levels(v.size());
  for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = 0.05 * static_cast<double>(i);
  std::shuffle(levels.begin(), levels.end(), rng);
  v = levels;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// One trial: randomize parameters, then check dL/dx and dL/dθ for
// L = Σ w ⊙ layer(x) with a random projection w. Dropout masks are pinned by
// reseeding before every forward pass.
inline GradCheck check_layer(nn::Layer<double>& layer, Tensord x, bool training,
                             std::mt19937_64& rng, const std::string& name) {
  GradCheck out;
  out.trials = 1;
  for (auto* p : layer.params()) fill_normal(p->value.data, rng, 0.5);
  const std::uint64_t mask_seed = rng();

  auto run = [&](const Tensord& in) {
    layer.reseed(mask_seed);
    return layer.forward(in, training);
  };
  Tensord w = run(x);
  fill_normal(w.data, rng);

  for (auto* p : layer.params()) p->grad.fill(0.0);
  run(x);
  const Tensord dx = layer.backward(w);
  std::vector<std::vector<double>> dparams;
  for (auto* p : layer.params()) dparams.push_back(p->grad.data);

  auto f = [&] { return dot(run(x).data, w.data); };
  compare_coords(out, name + ".x", x.data, dx.data, f);
  auto params = layer.params();
  for (std::size_t k = 0; k < params.size(); ++k)
    compare_coords(out, name + "." + params[k]->name, params[k]->value.data, dparams[k], f);
  return out;
}

// Checks the gradient a loss reports for its input tensor.
inline GradCheck check_loss(Tensord input, const std::function<LossValue<double>(const Tensord&)>& loss,
                            const std::string& name) {
  GradCheck out;
  out.trials = 1;
  const auto analytic = loss(input).grad;
  compare_coords(out, name, input.data, analytic.data, [&] { return loss(input).scalar; });
  return out;
}

}  // namespace dtae::testing
