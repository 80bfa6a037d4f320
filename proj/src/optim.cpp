#include "macnet/optim.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace macnet {

GradTable zero_grads(const ParamRegistry& reg) {
    GradTable g(reg.size());
    for (size_t i = 0; i < reg.size(); ++i) g[i].assign(reg.param(i).numel(), 0.0);
    return g;
}

double clip_gradients(GradTable& grads, double max_norm) {
    if (!(max_norm > 0.0)) throw ContractError("clip threshold must be positive");
    double sq = 0.0;
    for (const auto& g : grads)
        for (double v : g) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& g : grads)
            for (double& v : g) v *= scale;
    }
    return norm;
}

AdamState AdamState::create(const ParamRegistry& reg, AdamConfig cfg) {
    AdamState st;
    st.cfg = cfg;
    st.m = zero_grads(reg);
    st.v = zero_grads(reg);
    return st;
}

void adam_step(AdamState& state, ParamRegistry& reg, const GradTable& grads) {
    if (grads.size() != reg.size())
        throw ContractError("gradient table has " + std::to_string(grads.size()) +
                            " entries for " + std::to_string(reg.size()) + " parameters");
    for (size_t i = 0; i < reg.size(); ++i) {
        const auto& g = grads[i];
        if (g.size() != reg.param(i).numel())
            throw ContractError("gradient shape mismatch for " + reg.name(i));
        for (size_t j = 0; j < g.size(); ++j)
            if (!std::isfinite(g[j]))
                throw TrainingError("non-finite gradient " + std::to_string(g[j]) + " in " +
                                    reg.name(i) + "[" + std::to_string(j) + "] at step " +
                                    std::to_string(state.t + 1));
    }
    state.t += 1;
    const auto& c = state.cfg;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < reg.size(); ++i) {
        auto theta = reg.param(i).mutable_data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto& g = grads[i];
        for (size_t j = 0; j < g.size(); ++j) {
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
            theta[j] -= c.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.eps);
        }
    }
}

EmaState EmaState::create(const ParamRegistry& reg, double decay) {
    if (!(decay > 0.0 && decay < 1.0)) throw ContractError("EMA decay must lie in (0,1)");
    EmaState e;
    e.decay = decay;
    e.shadow.resize(reg.size());
    for (size_t i = 0; i < reg.size(); ++i) e.shadow[i] = reg.param(i).to_vector();
    return e;
}

void EmaState::update(const ParamRegistry& reg) {
    if (shadow.size() != reg.size()) throw ContractError("EMA shadow count mismatch");
    for (size_t i = 0; i < reg.size(); ++i) {
        auto p = reg.param(i).data();
        auto& s = shadow[i];
        if (s.size() != p.size()) throw ContractError("EMA shadow shape mismatch for " + reg.name(i));
        for (size_t j = 0; j < s.size(); ++j) s[j] = decay * s[j] + (1.0 - decay) * p[j];
    }
}

EmaScope::EmaScope(ParamRegistry& reg, const EmaState& ema) : reg_(reg) {
    if (ema.shadow.size() != reg.size()) throw ContractError("EMA shadow count mismatch");
    saved_.resize(reg.size());
    for (size_t i = 0; i < reg.size(); ++i) {
        saved_[i] = reg.param(i).to_vector();
        auto p = reg.param(i).mutable_data();
        const auto& s = ema.shadow[i];
        if (s.size() != p.size()) throw ContractError("EMA shadow shape mismatch for " + reg.name(i));
        std::copy(s.begin(), s.end(), p.begin());
    }
}

EmaScope::~EmaScope() {
    for (size_t i = 0; i < reg_.size(); ++i) {
        auto p = reg_.param(i).mutable_data();
        std::copy(saved_[i].begin(), saved_[i].end(), p.begin());
    }
}

EarlyStopper::EarlyStopper(size_t patience_in) : patience(patience_in) {
    if (patience == 0) throw ContractError("early-stop patience must be at least 1");
    best = -std::numeric_limits<double>::infinity();
}

bool EarlyStopper::observe(double score) {
    if (score > best) {
        best = score;
        best_index = n_observed;
        since_best = 0;
    } else {
        ++since_best;
    }
    ++n_observed;
    return since_best >= patience;
}

}  // namespace macnet
