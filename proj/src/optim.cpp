#include "stagerl/optim.hpp"

#include <cmath>
#include <vector>

#include "stagerl/errors.hpp"

namespace stagerl {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(const std::string& s) {
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "adam") return OptimizerKind::Adam;
    throw InvalidConfig("unknown optimizer '" + s + "'");
}

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidConfig("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidConfig("momentum must lie in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw InvalidConfig("betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw InvalidConfig("epsilon must be positive");
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void Optimizer::step(PolicyParams& params, const SparseGrad& grad) {
    ++t_;
    const std::size_t V = params.vocab_size();
    // Entries update independently, so row visiting order cannot change results.
    std::vector<const LogitTable::value_type*> rows;
    rows.reserve(grad.rows().size());
    for (const auto& kv : grad.rows()) rows.push_back(&kv);

    if (cfg_.kind == OptimizerKind::Sgd) {
        if (cfg_.momentum == 0.0) {
            grad.apply_to(params, cfg_.learning_rate);
            return;
        }
        for (auto& [key, vel] : m_)
            for (auto& x : vel) x *= cfg_.momentum;
        for (const auto* kv : rows) {
            auto& vel = m_[kv->first];
            if (vel.empty()) vel.assign(V, 0.0);
            for (std::size_t i = 0; i < V; ++i) vel[i] += kv->second[i];
        }
        for (const auto& [key, vel] : m_) {
            auto& row = params.row(key);
            for (std::size_t i = 0; i < V; ++i) row[i] += cfg_.learning_rate * vel[i];
        }
        return;
    }

    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto* kv : rows) {
        auto& m = m_[kv->first];
        auto& v = v_[kv->first];
        if (m.empty()) {
            m.assign(V, 0.0);
            v.assign(V, 0.0);
        }
        auto& row = params.row(kv->first);
        const auto& g = kv->second;
        for (std::size_t i = 0; i < V; ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            row[i] += cfg_.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.epsilon);
        }
    }
}

}  // namespace stagerl
