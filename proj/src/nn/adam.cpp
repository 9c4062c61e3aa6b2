#include "dtae/nn/adam.hpp"

#include <cmath>

namespace dtae::nn {

template <typename T>
void Adam<T>::step(std::span<Param<T>* const> params) {
  for (auto* p : params)
    if (p->grad.shape != p->value.shape)
      throw ShapeError("adam: gradient shape " + shape_str(p->grad.shape) + " does not match " +
                       p->name + " " + shape_str(p->value.shape));
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  // Bias correction folded into the step size: lr * sqrt(c2) / c1, eps scaled to match.
  const T step = static_cast<T>(cfg_.lr * std::sqrt(c2) / c1);
  const T eps = static_cast<T>(cfg_.eps * std::sqrt(c2));
  for (auto* p : params) {
    auto [it, fresh] = moments_.try_emplace(p->name);
    auto& mo = it->second;
    if (fresh) {
      mo.m = Tensor<T>(p->value.shape);
      mo.v = Tensor<T>(p->value.shape);
    } else if (mo.m.shape != p->value.shape) {
      throw ShapeError("adam: moment shape mismatch for " + p->name);
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const T g = p->grad[i];
      mo.m[i] = b1 * mo.m[i] + (T(1) - b1) * g;
      mo.v[i] = b2 * mo.v[i] + (T(1) - b2) * g * g;
      p->value[i] -= step * mo.m[i] / (std::sqrt(mo.v[i]) + eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace dtae::nn
