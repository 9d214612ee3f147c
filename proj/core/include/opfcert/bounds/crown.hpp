#pragma once

#include <vector>

#include <Eigen/Dense>

#include "opfcert/bounds/box.hpp"
#include "opfcert/nn/mlp.hpp"

namespace opfcert::bounds {

/// How hidden pre-activation bounds are obtained: by a backward linear pass per layer
/// (tight) or by interval arithmetic (fast, looser).
enum class IntermediateMode { Crown, Interval };

/// Pre-activation bounds of every hidden layer over a box, as tape columns.
struct HiddenBounds {
    std::vector<nn::ad::Var> lower;
    std::vector<nn::ad::Var> upper;
};

/// Linear bounds A_l x + b_l <= q(x) <= A_u x + b_u over the box for the target
/// q = C y(x) + c, with y the physical model output and x the physical input, plus their
/// concretization [lo, hi] over the box.
struct AffineVars {
    nn::ad::Var lower_a, upper_a;  ///< k x n
    nn::ad::Var lower_b, upper_b;  ///< k x 1
    nn::ad::Var lo, hi;            ///< k x 1
};

struct AffineBounds {
    Eigen::MatrixXd lower_a, upper_a;
    Eigen::VectorXd lower_b, upper_b;
    Eigen::VectorXd lo, hi;
};

HiddenBounds hidden_bounds(nn::ad::Tape& tape, const nn::MlpVars& vars, const nn::MlpModel& model, const Box& box,
                           IntermediateMode mode = IntermediateMode::Crown);

/// Backward bound propagation of spec (k x output_dim) through the network with the
/// standard ReLU relaxation: upper line through (l, 0) and (u, u); lower slope 1 when
/// u > -l, else 0. Sound for every x in the box. Gradients flow through the relaxation
/// slopes and intercepts as functions of the hidden bounds.
AffineVars crown(nn::ad::Tape& tape, const nn::MlpVars& vars, const nn::MlpModel& model, const Box& box,
                 const HiddenBounds& hidden, const Eigen::MatrixXd& spec, const Eigen::VectorXd& offset);

/// Plain-value wrapper: hidden bounds plus one backward pass, no gradients.
AffineBounds crown_bounds(const nn::MlpModel& model, const Box& box, const Eigen::MatrixXd& spec,
                          const Eigen::VectorXd& offset = {}, IntermediateMode mode = IntermediateMode::Crown);

}  // namespace opfcert::bounds
