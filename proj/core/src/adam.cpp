#include "mdm/adam.hpp"

#include <cmath>

#include "mdm/errors.hpp"

namespace mdm::opt {

Adam::Adam(std::vector<torch::Tensor> params, Options opts)
    : params_(std::move(params)), opts_(opts) {
  if (!(opts_.lr > 0)) throw ConfigError("adam: lr must be > 0");
  if (!(opts_.beta1 >= 0 && opts_.beta1 < 1) ||
      !(opts_.beta2 >= 0 && opts_.beta2 < 1)) {
    throw ConfigError("adam: betas must lie in [0, 1)");
  }
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(torch::zeros_like(p));
    v_.push_back(torch::zeros_like(p));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
}

void Adam::step() {
  torch::NoGradGuard ng;
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto g = params_[i].grad();
    if (!g.defined()) continue;
    m_[i].mul_(opts_.beta1).add_(g, 1.0 - opts_.beta1);
    v_[i].mul_(opts_.beta2).addcmul_(g, g, 1.0 - opts_.beta2);
    auto denom = (v_[i] / bc2).sqrt_().add_(opts_.eps);
    params_[i].addcdiv_(m_[i] / bc1, denom, -opts_.lr);
  }
}

void Adam::export_state(std::map<std::string, torch::Tensor>& out,
                        const std::string& prefix) const {
  out[prefix + ".step"] = torch::tensor(t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out[prefix + ".m." + std::to_string(i)] = m_[i];
    out[prefix + ".v." + std::to_string(i)] = v_[i];
  }
}

void Adam::import_state(const std::map<std::string, torch::Tensor>& in,
                        const std::string& prefix) {
  auto fetch = [&](const std::string& key) -> const torch::Tensor& {
    auto it = in.find(key);
    if (it == in.end()) throw DataError("adam state missing key " + key);
    return it->second;
  };
  t_ = fetch(prefix + ".step").item<std::int64_t>();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto m = fetch(prefix + ".m." + std::to_string(i));
    auto v = fetch(prefix + ".v." + std::to_string(i));
    if (!m.sizes().equals(params_[i].sizes()) ||
        !v.sizes().equals(params_[i].sizes())) {
      throw DataError("adam state shape mismatch at index " +
                      std::to_string(i));
    }
    m_[i].copy_(m);
    v_[i].copy_(v);
  }
}

}  // namespace mdm::opt
