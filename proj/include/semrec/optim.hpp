#pragma once

#include "semrec/autodiff.hpp"

namespace semrec {

// A named trainable leaf. The Variable carries both the value and the
// gradient buffer; names are unique dotted paths within a model.
struct Parameter {
  Var var;
  std::string name;

  Parameter() = default;
  Parameter(Tensor value, std::string n) : var(make_var(std::move(value), true)), name(std::move(n)) {}

  Tensor& value() { return var->value; }
  const Tensor& value() const { return var->value; }
  Tensor& gradient() {
    var->ensure_grad();
    return var->grad;
  }
  int64_t numel() const { return var->value.numel(); }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction. State slots are bound to a fixed
// parameter list at init; step() applies the update and zeroes gradients.
class Adam {
 public:
  Adam() = default;

  Adam(const std::vector<Parameter>& params, AdamConfig cfg = {}) : cfg_(cfg) {
    slots_.reserve(params.size());
    for (const auto& p : params) {
      slots_.push_back(Slot{Tensor(p.var->value.shape()), Tensor(p.var->value.shape())});
    }
    initialized_ = true;
  }

  int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

  void step(std::vector<Parameter>& params) {
    if (!initialized_) throw ConfigError("adam_step: optimizer state not initialized");
    if (params.size() != slots_.size()) {
      throw ConfigError(str_cat("adam_step: ", params.size(), " parameters vs ",
                                slots_.size(), " state slots"));
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
      Variable& v = *params[pi].var;
      if (v.value.shape() != slots_[pi].m.shape()) {
        throw ConfigError(str_cat("adam_step: parameter ", params[pi].name,
                                  " shape changed since init"));
      }
      v.ensure_grad();
      Tensor& m = slots_[pi].m;
      Tensor& w = slots_[pi].v;
      const int64_t n = v.value.numel();
      for (int64_t i = 0; i < n; ++i) {
        const double g = v.grad[i];
        const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        const double wi = cfg_.beta2 * w[i] + (1.0 - cfg_.beta2) * g * g;
        m[i] = static_cast<float>(mi);
        w[i] = static_cast<float>(wi);
        const double mhat = mi / bc1;
        const double what = wi / bc2;
        v.value[i] -= static_cast<float>(cfg_.lr * mhat / (std::sqrt(what) + cfg_.eps));
      }
      v.value.check_finite("adam_step");
      v.grad.fill(0.0f);
    }
  }

 private:
  struct Slot {
    Tensor m, v;
  };
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  int64_t step_ = 0;
  bool initialized_ = false;
};

inline int64_t count_parameters(const std::vector<Parameter>& params) {
  int64_t total = 0;
  for (const auto& p : params) total += p.var->value.numel();
  return total;
}

}  // namespace semrec
