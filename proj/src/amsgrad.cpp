#include <algorithm>
#include <cmath>

#include "lfg/error.hpp"
#include "lfg/train.hpp"

namespace lfg::train {

bool amsgrad_step(std::span<nn::Param* const> params, AMSGradState& state, double lr) {
  for (const auto* p : params) {
    for (double g : p->grad.values()) {
      if (!std::isfinite(g)) {
        ++state.skipped;
        return false;
      }
    }
  }
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
      state.vhat.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size()) throw_data("amsgrad: parameter count changed");

  const auto& c = state.config;
  const std::int64_t t = state.step + 1;
  const double bc1 = c.bias_correction ? 1.0 - std::pow(c.beta1, static_cast<double>(t)) : 1.0;
  const double bc2 = c.bias_correction ? 1.0 - std::pow(c.beta2, static_cast<double>(t)) : 1.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    nn::Param& p = *params[k];
    nn::check_same_shape(p.value, state.m[k], "amsgrad");
    auto& m = state.m[k];
    auto& v = state.v[k];
    auto& vh = state.vhat[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = static_cast<float>(c.beta1 * m[i] + (1 - c.beta1) * g);
      v[i] = static_cast<float>(c.beta2 * v[i] + (1 - c.beta2) * g * g);
      vh[i] = std::max(vh[i], v[i]);
      const double step = lr * (m[i] / bc1) / (std::sqrt(vh[i] / bc2) + c.eps);
      p.value[i] = static_cast<float>(p.value[i] - step);
    }
  }
  state.step = t;
  return true;
}

void AMSGradState::export_state(Checkpoint& ck, const std::string& prefix) const {
  ck.config[prefix + ".step"] = std::to_string(step);
  ck.config[prefix + ".skipped"] = std::to_string(skipped);
  for (std::size_t k = 0; k < m.size(); ++k) {
    ck.put(prefix + ".m." + std::to_string(k), m[k]);
    ck.put(prefix + ".v." + std::to_string(k), v[k]);
    ck.put(prefix + ".vhat." + std::to_string(k), vhat[k]);
  }
}

void AMSGradState::import_state(const Checkpoint& ck, const std::string& prefix,
                                std::span<nn::Param* const> params) {
  step = std::stoll(ck.require(prefix + ".step"));
  skipped = std::stoll(ck.require(prefix + ".skipped"));
  m.clear();
  v.clear();
  vhat.clear();
  if (!ck.has(prefix + ".m.0")) return;  // saved before the first update
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto shape = params[k]->value.shape();
    m.emplace_back(shape);
    v.emplace_back(shape);
    vhat.emplace_back(shape);
    ck.load_into(prefix + ".m." + std::to_string(k), m.back());
    ck.load_into(prefix + ".v." + std::to_string(k), v.back());
    ck.load_into(prefix + ".vhat." + std::to_string(k), vhat.back());
  }
}

}  // namespace lfg::train
