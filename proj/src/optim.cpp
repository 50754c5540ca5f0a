#include "hvla/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hvla {

double warmup_cosine_lr(int64_t step, int64_t total_steps, double base_lr, double warmup_frac) {
    if (total_steps <= 0) throw std::invalid_argument("schedule: total_steps must be positive");
    if (step < 0 || step >= total_steps) {
        throw std::invalid_argument("schedule: step " + std::to_string(step) +
                                    " outside [0," + std::to_string(total_steps) + ")");
    }
    const auto warmup = static_cast<int64_t>(
        std::floor(warmup_frac * static_cast<double>(total_steps)));
    if (step < warmup) {
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    const int64_t span = std::max<int64_t>(1, total_steps - 1 - warmup);
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(span);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(std::map<std::string, Tensor>& params, double beta1, double beta2, double eps,
             double weight_decay)
    : params_(&params), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
    for (auto& [name, p] : params) {
        m_[name].assign(static_cast<size_t>(p.numel()), 0.0);
        v_[name].assign(static_cast<size_t>(p.numel()), 0.0);
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : *params_) {
        auto values = p.raw_data();
        auto grads = p.raw_grad();  // zero-filled if backward never touched it
        auto& m = m_[name];
        auto& v = v_[name];
        for (size_t i = 0; i < values.size(); ++i) {
            const double g = grads[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            values[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * values[i]);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& [name, p] : *params_) p.zero_grad();
}

}  // namespace hvla
