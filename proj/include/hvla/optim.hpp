#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hvla/tensor.hpp"

namespace hvla {

// Linear ramp over the warmup steps, then cosine from the peak to exactly 0
// at the final step.
double warmup_cosine_lr(int64_t step, int64_t total_steps, double base_lr, double warmup_frac);

// Adaptive-moment optimizer with decoupled weight decay.
class AdamW {
public:
    explicit AdamW(std::map<std::string, Tensor>& params, double beta1 = 0.9,
                   double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0);

    void step(double lr);
    void zero_grad();

private:
    std::map<std::string, Tensor>* params_;
    double beta1_, beta2_, eps_, weight_decay_;
    int64_t t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace hvla
