#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "cgr/tensor.hpp"

namespace cgr {

// Cosine annealing from lr_init at t = 0 down to lr_min at t = total.
inline double cosine_lr(std::size_t t, std::size_t total, double lr_init, double lr_min) {
    if (total == 0) throw ContractError("cosine_lr: total must be >= 1");
    if (lr_min > lr_init) throw ContractError("cosine_lr: lr_min must not exceed lr_init");
    const double frac = static_cast<double>(t) / static_cast<double>(total);
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    std::size_t steps() const { return t_; }

    // One update of every parameter that has a gradient. Parameters are
    // replaced by fresh leaves holding the new values.
    void step(ParameterMap& params, const Gradients& grads, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& [name, p] : params) {
            auto git = grads.find(name);
            if (git == grads.end()) continue;
            const auto& g = git->second.data();
            if (g.size() != p.numel()) throw ShapeError("adam: gradient of '" + name + "' has wrong size");
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.empty()) {
                m.assign(g.size(), 0.0);
                v.assign(g.size(), 0.0);
            }
            std::vector<double> w = p.values();
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mhat = m[i] / c1;
                const double vhat = v[i] / c2;
                w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
            p = Tensor::parameter(p.shape(), std::move(w));
        }
    }

private:
    AdamConfig cfg_;
    std::size_t t_ = 0;
    std::map<std::string, std::vector<double>> m_;
    std::map<std::string, std::vector<double>> v_;
};

}  // namespace cgr
