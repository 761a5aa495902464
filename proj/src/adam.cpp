#include "seavae/adam.hpp"

#include <cmath>
#include <fmt/format.h>

#include "seavae/tensor.hpp"

namespace seavae {

NonFiniteGradient::NonFiniteGradient(std::string parameter)
    : std::runtime_error(fmt::format("non-finite gradient in parameter '{}'", parameter)),
      parameter_(std::move(parameter)) {}

AdamState make_adam_state(std::span<const ParamSlot> slots, AdamConfig config) {
    AdamState state;
    state.config = config;
    for (const auto& slot : slots) {
        state.first_moment.emplace_back(slot.value.size(), 0.0);
        state.second_moment.emplace_back(slot.value.size(), 0.0);
    }
    return state;
}

void adam_step(std::span<const ParamSlot> slots, AdamState& state) {
    if (state.first_moment.size() != slots.size()) {
        throw ShapeError(fmt::format("adam state tracks {} parameters, step given {}", state.first_moment.size(),
                                     slots.size()));
    }
    for (std::size_t s = 0; s < slots.size(); ++s) {
        const auto& slot = slots[s];
        if (slot.grad.size() != slot.value.size() || state.first_moment[s].size() != slot.value.size()) {
            throw ShapeError(fmt::format("parameter '{}': value {} / grad {} / state {} lengths differ", slot.name,
                                         slot.value.size(), slot.grad.size(), state.first_moment[s].size()));
        }
        for (double g : slot.grad) {
            if (!std::isfinite(g)) {
                throw NonFiniteGradient(slot.name);
            }
        }
    }

    const auto& cfg = state.config;
    state.step += 1;
    const auto t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(cfg.beta1, t);
    const double correction2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t s = 0; s < slots.size(); ++s) {
        auto& m = state.first_moment[s];
        auto& v = state.second_moment[s];
        const auto& slot = slots[s];
        for (std::size_t i = 0; i < slot.value.size(); ++i) {
            const double g = slot.grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            double updated = slot.value[i] - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps);
            if (cfg.single_precision_storage) {
                updated = static_cast<double>(static_cast<float>(updated));
            }
            slot.value[i] = updated;
        }
    }
}

}  // namespace seavae
