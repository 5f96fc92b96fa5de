#pragma once

#include <cstdint>

#include "metasym/autodiff/params.hpp"

namespace metasym::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled (AdamW) decay; zero gives plain Adam.
  double weight_decay = 0.0;
};

/// Adaptive moment estimation with optional decoupled weight decay.
///
/// Moment buffers are keyed by parameter name and created on first use.
/// Parameters absent from the gradient table are left untouched.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  void step(ParamTable& params, const ParamTable& grads);
  void reset();

  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return t_; }

 private:
  AdamConfig config_;
  ParamTable m_;
  ParamTable v_;
  std::int64_t t_ = 0;
};

}  // namespace metasym::ad
