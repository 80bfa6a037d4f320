#pragma once

#include <cstddef>
#include <vector>

#include "macnet/errors.hpp"
#include "macnet/nn.hpp"

namespace macnet {

// Per-parameter gradient accumulators, aligned with registry indices.
using GradTable = std::vector<std::vector<double>>;

GradTable zero_grads(const ParamRegistry& reg);

// Scales all gradients by max_norm / ||g||_2 when the global L2 norm exceeds
// max_norm; returns the pre-clip norm. A non-finite norm leaves the gradients
// untouched so the optimizer step can report the offending parameter.
double clip_gradients(GradTable& grads, double max_norm);

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam. Moments are aligned with registry indices.
struct AdamState {
    AdamConfig cfg;
    size_t t = 0;
    GradTable m;
    GradTable v;

    static AdamState create(const ParamRegistry& reg, AdamConfig cfg = {});
};

// One update over every registered parameter, in place.
// TrainingError on any non-finite gradient, naming the parameter.
void adam_step(AdamState& state, ParamRegistry& reg, const GradTable& grads);

// Exponential moving average of the weights; the shadow copy is what
// evaluation reads when EMA is enabled.
struct EmaState {
    double decay = 0.999;
    GradTable shadow;

    static EmaState create(const ParamRegistry& reg, double decay = 0.999);
    void update(const ParamRegistry& reg);  // shadow <- decay*shadow + (1-decay)*param
};

// Temporarily installs the shadow weights into the registry; restores the raw
// weights on destruction. Keep alive for the duration of an EMA evaluation.
class EmaScope {
  public:
    EmaScope(ParamRegistry& reg, const EmaState& ema);
    ~EmaScope();
    EmaScope(const EmaScope&) = delete;
    EmaScope& operator=(const EmaScope&) = delete;

  private:
    ParamRegistry& reg_;
    GradTable saved_;
};

// Stop once the best validation score has gone `patience` observations
// without strict improvement. Scores are maximized.
struct EarlyStopper {
    size_t patience = 5;
    size_t n_observed = 0;
    size_t best_index = 0;
    double best = 0.0;
    size_t since_best = 0;

    explicit EarlyStopper(size_t patience = 5);
    // Records one validation score; true means stop now.
    bool observe(double score);
    // True right after an observation that improved the best score.
    bool improved() const { return n_observed > 0 && since_best == 0; }
};

}  // namespace macnet
