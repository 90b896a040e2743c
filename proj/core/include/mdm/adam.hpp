#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace mdm::opt {

// Adam with bias correction. Hand-rolled so the full optimizer state
// (moments + step count) serializes exactly, which the bitwise
// checkpoint-resume guarantee depends on.
struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  using Options = AdamOptions;

  explicit Adam(std::vector<torch::Tensor> params, Options opts = {});

  void zero_grad();
  void step();  // parameters with undefined grads are left untouched
  std::int64_t steps() const { return t_; }
  Options& options() { return opts_; }

  // Flat tensor-map serialization under the given key prefix.
  void export_state(std::map<std::string, torch::Tensor>& out,
                    const std::string& prefix) const;
  void import_state(const std::map<std::string, torch::Tensor>& in,
                    const std::string& prefix);

 private:
  std::vector<torch::Tensor> params_, m_, v_;
  Options opts_;
  std::int64_t t_ = 0;
};

}  // namespace mdm::opt
