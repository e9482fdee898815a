#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "regvd/matrix.hpp"
#include "regvd/model.hpp"

namespace regvd {

/// Per-parameter first/second moment accumulators plus the shared step
/// counter, aligned with ModelParams::parameters() order.
template <typename T>
struct AdamState {
    struct Slot {
        Matrix<T> m;
        Matrix<T> v;
    };
    std::vector<Slot> slots;
    std::int64_t step = 0;
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T epsilon = T(1e-8);

    static AdamState init(const ModelParams<T>& params) {
        AdamState state;
        for (const auto& p : params.parameters()) {
            state.slots.push_back({Matrix<T>(p.matrix->rows(), p.matrix->cols()),
                                   Matrix<T>(p.matrix->rows(), p.matrix->cols())});
        }
        return state;
    }
};

/// Bias-corrected Adam update for one tensor.
template <typename T>
void adam_update_tensor(Matrix<T>& theta, const Matrix<T>& grad,
                        typename AdamState<T>::Slot& slot, std::int64_t step, T lr, T beta1,
                        T beta2, T epsilon) {
    require(theta.same_shape(grad), "adam: gradient shape mismatch");
    const T m_correction = T(1) - std::pow(beta1, static_cast<T>(step));
    const T v_correction = T(1) - std::pow(beta2, static_cast<T>(step));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const T g = grad.data()[i];
        T& m = slot.m.data()[i];
        T& v = slot.v.data()[i];
        m = beta1 * m + (T(1) - beta1) * g;
        v = beta2 * v + (T(1) - beta2) * g * g;
        const T m_hat = m / m_correction;
        const T v_hat = v / v_correction;
        theta.data()[i] -= lr * m_hat / (std::sqrt(v_hat) + epsilon);
    }
}

/// One optimizer step over the whole model. Gradients are checked finite;
/// a frozen embedding table is skipped (its slot stays untouched).
template <typename T>
void adam_step(ModelParams<T>& params, const std::vector<Matrix<T>>& grads, AdamState<T>& state,
               T lr, bool freeze_embedding = false) {
    auto named = params.parameters();
    require(named.size() == grads.size() && named.size() == state.slots.size(),
            "adam_step: parameter/gradient/state count mismatch");
    ++state.step;
    for (std::size_t i = 0; i < named.size(); ++i) {
        if (freeze_embedding && named[i].name == "embedding") continue;
        if (!grads[i].all_finite()) {
            throw std::runtime_error("adam_step: non-finite gradient for " + named[i].name);
        }
        adam_update_tensor(*named[i].matrix, grads[i], state.slots[i], state.step, lr, state.beta1,
                           state.beta2, state.epsilon);
    }
}

}  // namespace regvd
