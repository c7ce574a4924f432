#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>

#include "modrobe/errors.hpp"
#include "modrobe/tensor.hpp"

namespace modrobe {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Learning-rate schedule: linear warmup from 0 to peak over warmup_steps,
/// then cosine decay to 0 at total_steps.
struct ScheduleConfig {
  double peak_lr = 8e-4;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 0;
};

inline double lr_at(const ScheduleConfig& s, std::size_t step) {
  if (s.total_steps < s.warmup_steps)
    throw config_error("schedule: total_steps (" +
                       std::to_string(s.total_steps) + ") < warmup_steps (" +
                       std::to_string(s.warmup_steps) + ")");
  if (s.warmup_steps > 0 && step < s.warmup_steps)
    return s.peak_lr * static_cast<double>(step) /
           static_cast<double>(s.warmup_steps);
  std::size_t span = s.total_steps - s.warmup_steps;
  if (span == 0) return step == s.warmup_steps ? s.peak_lr : 0.0;
  double progress =
      static_cast<double>(step - s.warmup_steps) / static_cast<double>(span);
  if (progress >= 1.0) return 0.0;
  return s.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// AdamW with decoupled weight decay:
///   m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
///   w <- w - lr * ( m_hat / (sqrt(v_hat) + eps) + wd * w )
/// Moments live here, keyed by parameter name; shapes are pinned on first
/// sight. Gradients are validated finite before anything mutates.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWHyper hp) : hp_(hp) {}

  std::size_t step_count() const { return t_; }

  void step(std::map<std::string, Tensor<T>>& params,
            const std::map<std::string, Tensor<T>>& grads, double lr) {
    for (const auto& [name, p] : params) {
      auto it = grads.find(name);
      if (it == grads.end())
        throw std::logic_error("adamw_step: missing gradient for '" + name +
                               "'");
      if (!it->second.same_shape(p))
        throw std::logic_error("adamw_step: gradient shape " +
                               shape_str(it->second.shape()) +
                               " != parameter shape " + shape_str(p.shape()) +
                               " for '" + name + "'");
      if (!it->second.all_finite())
        throw std::runtime_error("adamw_step: non-finite gradient for '" +
                                 name + "'");
    }
    ++t_;
    double bc1 = 1.0 - std::pow(hp_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(hp_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      const Tensor<T>& g = grads.at(name);
      Tensor<T>& m = moment(m_, name, p);
      Tensor<T>& v = moment(v_, name, p);
      auto pd = p.data();
      auto gd = g.data();
      auto md = m.data();
      auto vd = v.data();
      for (std::size_t i = 0; i < pd.size(); ++i) {
        md[i] = static_cast<T>(hp_.beta1 * md[i] + (1.0 - hp_.beta1) * gd[i]);
        vd[i] = static_cast<T>(hp_.beta2 * vd[i] +
                               (1.0 - hp_.beta2) * gd[i] * gd[i]);
        double mhat = md[i] / bc1;
        double vhat = vd[i] / bc2;
        double upd = mhat / (std::sqrt(vhat) + hp_.eps) +
                     hp_.weight_decay * pd[i];
        pd[i] = static_cast<T>(pd[i] - lr * upd);
      }
    }
  }

 private:
  AdamWHyper hp_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor<T>> m_, v_;

  Tensor<T>& moment(std::map<std::string, Tensor<T>>& store,
                    const std::string& name, const Tensor<T>& p) {
    auto it = store.find(name);
    if (it == store.end())
      it = store.emplace(name, Tensor<T>::zeros(p.shape())).first;
    else if (!it->second.same_shape(p))
      throw std::logic_error("adamw_step: parameter '" + name +
                             "' changed shape");
    return it->second;
  }
};

}  // namespace modrobe
