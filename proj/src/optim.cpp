#include "tacorr/optim.hpp"

#include <cmath>

namespace tacorr {

AdamW::AdamW(std::vector<Parameter*> params, Options opts)
    : params_(std::move(params)), opts_(opts) {
    slots_.reserve(params_.size());
    for (Parameter* p : params_) {
        if (!p) throw ContractError("AdamW: null parameter");
        slots_.push_back({Tensor::zeros(p->value.shape), Tensor::zeros(p->value.shape)});
    }
}

void AdamW::step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Parameter& p = *params_[pi];
        if (!p.grad.same_shape(p.value))
            throw ContractError("AdamW: grad shape mismatch for '" + p.name + "'");
        Slot& s = slots_[pi];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad.values[i];
            if (!std::isfinite(g))
                throw NumericError("AdamW: non-finite gradient in '" + p.name + "'");
            s.m.values[i] = opts_.beta1 * s.m.values[i] + (1.0 - opts_.beta1) * g;
            s.v.values[i] = opts_.beta2 * s.v.values[i] + (1.0 - opts_.beta2) * g * g;
            const double mhat = s.m.values[i] / bc1;
            const double vhat = s.v.values[i] / bc2;
            p.value.values[i] -=
                opts_.lr * (mhat / (std::sqrt(vhat) + opts_.eps) +
                            opts_.weight_decay * p.value.values[i]);
        }
    }
}

void AdamW::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

}  // namespace tacorr
