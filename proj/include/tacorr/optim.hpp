#pragma once

#include <vector>

#include "tacorr/tensor.hpp"

namespace tacorr {

// Decoupled-weight-decay Adam with bias correction. Moment buffers live with
// the optimizer, one slot per parameter, in registration order.
class AdamW {
public:
    struct Options {
        double lr = 5e-4;
        double weight_decay = 5e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    AdamW(std::vector<Parameter*> params, Options opts);

    void step();
    void zero_grad();
    void set_lr(double lr) { opts_.lr = lr; }

    long step_count() const { return step_; }
    const Options& options() const { return opts_; }

private:
    struct Slot {
        Tensor m;
        Tensor v;
    };
    std::vector<Parameter*> params_;
    std::vector<Slot> slots_;
    Options opts_;
    long step_ = 0;
};

}  // namespace tacorr
