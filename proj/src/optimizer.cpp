#include "exvae/optimizer.hpp"

#include <cmath>

namespace exvae {

void GnAdam::step(ParamTree& params, const ParamTree& grads) {
    params.check_same_shape(grads, "gn_adam_step");

    for (const auto& [name, g] : grads)
        if (!g.allFinite())
            throw NumericError("gn_adam_step: non-finite gradient in block " + name);

    if (!initialized_) {
        m_ = params.zeros_like();
        v_ = params.zeros_like();
        initialized_ = true;
    } else {
        params.check_same_shape(m_, "gn_adam_step state");
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

    auto gm = grads.begin();
    auto mm = m_.begin();
    auto vm = v_.begin();
    for (auto pm = params.begin(); pm != params.end(); ++pm, ++gm, ++mm, ++vm) {
        const double norm = gm->second.norm();
        if (norm == 0.0) continue; // skip rule: untouched parameters, untouched moments

        const Eigen::MatrixXd unit = gm->second / norm;
        mm->second = cfg_.beta1 * mm->second + (1.0 - cfg_.beta1) * unit;
        vm->second = cfg_.beta2 * vm->second + (1.0 - cfg_.beta2) * unit.cwiseProduct(unit);
        const Eigen::MatrixXd mhat = mm->second / bc1;
        const Eigen::MatrixXd vhat = vm->second / bc2;
        pm->second -= cfg_.lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + cfg_.eps).matrix());
    }

    if (!params.all_finite())
        throw NumericError("gn_adam_step: non-finite parameter after update");
}

} // namespace exvae
