#pragma once

#include <string>
#include <vector>

#include "freqmix/autograd.hpp"

namespace freqmix {

/// SGD with momentum and decoupled-from-nothing classic weight decay:
///   v ← momentum·v + grad + weight_decay·value
///   value ← value − lr·v
/// Gradients are cleared after the step.
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<Parameter*> params, double momentum, double weight_decay);

    void step(double lr);

    double momentum() const { return momentum_; }
    double weight_decay() const { return weight_decay_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> velocity_;
    double momentum_;
    double weight_decay_;
};

/// Single plain update on one parameter set (spec-level entry point; used by
/// SgdOptimizer internally and directly in tests).
void sgd_step(std::vector<Parameter*>& params, std::vector<Tensor>& velocity, double lr,
              double momentum, double weight_decay);

/// Flat checkpoint file: magic "FMXC", version byte, then per parameter a
/// (name, shape, little-endian f64 payload) record.
void save_checkpoint(const std::string& path, const std::vector<Parameter*>& params);
void load_checkpoint(const std::string& path, std::vector<Parameter*>& params);

}  // namespace freqmix
