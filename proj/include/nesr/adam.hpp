#pragma once

#include <cmath>
#include <vector>

#include "nesr/tensor.hpp"

namespace nesr {

// Adam with bias correction: p -= lr * m_hat / (sqrt(v_hat) + eps).
template <class T>
struct AdamState {
    struct Slot {
        Tensor<T> m;
        Tensor<T> v;
    };

    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lr = 1e-4;
    long long step_count = 0;
    std::vector<Slot> slots;

    void init(const std::vector<Tensor<T>*>& params) {
        slots.clear();
        slots.reserve(params.size());
        for (const Tensor<T>* p : params) {
            slots.push_back({Tensor<T>::zeros(p->shape()), Tensor<T>::zeros(p->shape())});
        }
        step_count = 0;
    }
};

template <class T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& state) {
    if (params.size() != grads.size() || params.size() != state.slots.size()) {
        throw ConfigError("adam_step: parameter/gradient/state counts disagree");
    }
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i];
        const Tensor<T>& g = grads[i];
        typename AdamState<T>::Slot& s = state.slots[i];
        if (g.shape() != p.shape() || s.m.shape() != p.shape()) {
            throw ConfigError("adam_step: shape mismatch at parameter " + std::to_string(i) +
                              ": param " + shape_str(p.shape()) + ", grad " +
                              shape_str(g.shape()));
        }
        T* pm = s.m.data();
        T* pv = s.v.data();
        T* pp = p.data();
        const T* pg = g.data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gd = static_cast<double>(pg[j]);
            const double m = state.beta1 * static_cast<double>(pm[j]) + (1.0 - state.beta1) * gd;
            const double v =
                state.beta2 * static_cast<double>(pv[j]) + (1.0 - state.beta2) * gd * gd;
            pm[j] = static_cast<T>(m);
            pv[j] = static_cast<T>(v);
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            pp[j] = static_cast<T>(static_cast<double>(pp[j]) -
                                   state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

}  // namespace nesr
