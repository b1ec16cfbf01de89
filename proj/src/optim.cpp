#include "optim.hpp"

#include <cmath>
#include <string>

namespace snds {

SgdOptimizer::SgdOptimizer(SgdConfig config) : config_(config) {
  if (config_.lr < 0.0) throw ConfigError("sgd: negative learning rate " + std::to_string(config_.lr));
}

void SgdOptimizer::set_lr(double lr) {
  if (lr < 0.0) throw ConfigError("sgd: negative learning rate " + std::to_string(lr));
  config_.lr = lr;
}

void SgdOptimizer::step(std::span<ad::Parameter* const> params) {
  for (ad::Parameter* p : params) {
    auto [it, inserted] = velocity_.try_emplace(p, ad::Tensor::zeros_like(p->value()));
    ad::Tensor& v = it->second;
    ad::Tensor& value = p->value();
    const ad::Tensor& grad = p->grad();
    for (int64_t i = 0; i < value.size(); ++i) {
      v[i] = config_.momentum * v[i] + grad[i] + config_.weight_decay * value[i];
      value[i] -= config_.lr * v[i];
    }
    if (!value.all_finite()) {
      throw NumericError("sgd: non-finite value in parameter '" + p->id() + "' after step");
    }
  }
}

void SgdOptimizer::zero_grad(std::span<ad::Parameter* const> params) {
  for (ad::Parameter* p : params) p->zero_grad();
}

double cosine_rampdown(int epoch, int total_epochs, double base_lr) {
  if (total_epochs <= 0) throw ConfigError("cosine_rampdown: total_epochs must be positive");
  if (epoch < 0 || epoch > total_epochs) {
    throw ConfigError("cosine_rampdown: epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(total_epochs) + "]");
  }
  return base_lr * (1.0 + std::cos(M_PI * static_cast<double>(epoch) / total_epochs)) / 2.0;
}

}  // namespace snds
