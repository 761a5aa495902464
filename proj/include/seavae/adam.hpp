#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace seavae {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Round every updated value to float32 (parameters are stored in single precision).
    bool single_precision_storage = false;
};

/// One named parameter buffer and its gradient.
struct ParamSlot {
    std::string name;
    std::span<double> value;
    std::span<const double> grad;
};

struct AdamState {
    AdamConfig config;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::uint64_t step = 0;
};

class NonFiniteGradient : public std::runtime_error {
public:
    explicit NonFiniteGradient(std::string parameter);
    [[nodiscard]] const std::string& parameter() const { return parameter_; }

private:
    std::string parameter_;
};

/// Zero-initialized accumulators matching the slot sizes.
AdamState make_adam_state(std::span<const ParamSlot> slots, AdamConfig config = {});

/// Bias-corrected Adam update in place. All gradients are checked before any
/// parameter changes; a NaN/Inf gradient throws NonFiniteGradient and leaves
/// parameters and state untouched.
void adam_step(std::span<const ParamSlot> slots, AdamState& state);

}  // namespace seavae
