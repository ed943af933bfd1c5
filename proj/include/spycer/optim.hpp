#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "spycer/tensor.hpp"

namespace spycer::ad {

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

/// Bias-corrected Adam over one parameter group.
template <typename T>
class Adam {
public:
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    Adam() = default;
    Adam(std::vector<Tensor<T>> params, double learning_rate) : lr(learning_rate), params_(std::move(params)) {
        for (const auto& p : params_) {
            m_.push_back(Tensor<T>::zeros(p.shape()));
            v_.push_back(Tensor<T>::zeros(p.shape()));
        }
    }

    long step_count() const { return step_; }
    const std::vector<Tensor<T>>& params() const { return params_; }
    const std::vector<Tensor<T>>& first_moments() const { return m_; }
    const std::vector<Tensor<T>>& second_moments() const { return v_; }
    void restore(std::vector<Tensor<T>> m, std::vector<Tensor<T>> v, long step) {
        m_ = std::move(m);
        v_ = std::move(v);
        step_ = step;
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    /// Applies one update using the gradients currently held by the
    /// parameters.
    void step() {
        ++step_;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto p = params_[k].values();
            auto g = params_[k].grad();
            auto m = m_[k].values();
            auto v = v_[k].values();
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = g[i];
                const double mi = beta1 * m[i] + (1.0 - beta1) * gi;
                const double vi = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                const double mhat = mi / c1;
                const double vhat = vi / c2;
                p[i] = static_cast<T>(p[i] - lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }

private:
    std::vector<Tensor<T>> params_;
    std::vector<Tensor<T>> m_, v_;
    long step_ = 0;
};

} // namespace spycer::ad
