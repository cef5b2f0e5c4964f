#pragma once

#include <cstdint>
#include <string>

#include "stagerl/policy.hpp"

namespace stagerl {

enum class OptimizerKind : std::uint8_t { Sgd, Adam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(const std::string& s);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Sgd;
    double learning_rate = 0.5;
    /// Heavy-ball coefficient for SGD; 0 is plain SGD.
    double momentum = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    /// Token-averaged gradients of rarely visited rows sit near 1e-6; a
    /// smaller epsilon lets Adam blow that noise up to full-size steps.
    double epsilon = 1e-5;

    void validate() const;
};

/// Gradient-ascent updater over sparse rows. Adam is the lazy variant:
/// moment estimates of a row only change on steps that touch it, while
/// bias correction follows the global step count.
class Optimizer {
public:
    Optimizer() = default;
    explicit Optimizer(OptimizerConfig cfg);

    const OptimizerConfig& config() const noexcept { return cfg_; }
    std::uint64_t steps() const noexcept { return t_; }

    /// params += update(grad)
    void step(PolicyParams& params, const SparseGrad& grad);

private:
    OptimizerConfig cfg_{};
    std::uint64_t t_ = 0;
    LogitTable m_;
    LogitTable v_;
};

}  // namespace stagerl
