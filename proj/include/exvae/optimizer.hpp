#pragma once

#include "exvae/numerics.hpp"

namespace exvae {

struct GnAdamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam on per-block L2-normalized gradients.
//
// Each block's gradient is rescaled to unit Frobenius norm before entering
// the moment estimates, which makes the update invariant to positive
// rescaling of any block's gradient. Blocks whose gradient is exactly zero
// are skipped outright: no parameter change, no moment update.
class GnAdam {
public:
    explicit GnAdam(GnAdamConfig cfg = {}) : cfg_(cfg) {}

    // Throws NumericError on any non-finite gradient entry, before touching
    // either the parameters or the internal state.
    void step(ParamTree& params, const ParamTree& grads);

    long steps_taken() const { return t_; }
    const GnAdamConfig& config() const { return cfg_; }

private:
    GnAdamConfig cfg_;
    ParamTree m_, v_;
    long t_ = 0;
    bool initialized_ = false;
};

} // namespace exvae
