#pragma once

#include <vector>

#include "clvae/nn.hpp"

namespace clvae {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. The learning rate is supplied per step so the
// caller owns the schedule.
class Adam {
 public:
  Adam(std::vector<nn::Parameter*> params, AdamOptions opts);

  void step(double lr);
  void zero_grad();
  long steps_taken() const { return t_; }

  // Moment buffers, exposed for checkpointing.
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::vector<nn::Parameter*> params_;
  AdamOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

// Linear decay from base_lr at step 0 to exactly 0 at the last step.
double linear_decay_lr(double base_lr, long step, long total_steps);

}  // namespace clvae
