#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "opfcert/bounds/box.hpp"
#include "opfcert/bounds/crown.hpp"
#include "opfcert/bounds/enclosures.hpp"
#include "opfcert/nn/losses.hpp"
#include "opfcert/nn/train.hpp"

namespace opfcert::bounds {

enum class ConstraintKind { Pg, Qg, Vm, Vg, Flow, Balance };

const char* kind_name(ConstraintKind k);
ConstraintKind parse_kind(std::string_view name);

/// One operational constraint. index is the generator for Pg, Qg and Vg, the bus position
/// for Vm and Balance, and the branch for Flow.
struct ConstraintId {
    ConstraintKind kind = ConstraintKind::Vm;
    Eigen::Index index = 0;

    std::string label() const;  ///< e.g. "vm[3]"
    bool operator==(const ConstraintId&) const = default;
};

/// Constraints a head can be checked against, in canonical order. Power head: Pg then Vg.
/// Voltage head: Pg, Qg, Vm, Flow, then Balance at buses without a generator.
std::vector<ConstraintId> constraint_set(nn::Head head, const nn::GridContext& ctx);

struct WorstCaseOptions {
    IntermediateMode intermediate = IntermediateMode::Crown;
    NormMode norm = NormMode::Enclosure;
};

/// Violation of one constraint at a single input: the ReLU-clipped bound excess (pu), or
/// for Balance the squared active plus reactive mismatch.
double violation(const nn::MlpModel& model, const nn::GridContext& ctx, const Eigen::VectorXd& x,
                 const ConstraintId& id);
/// All constraints of constraint_set(model.head, ctx) at x.
Eigen::VectorXd violations(const nn::MlpModel& model, const nn::GridContext& ctx, const Eigen::VectorXd& x);

/// Sound upper bounds nu on the worst-case violation over the box for every constraint of
/// the head, as a tape column in constraint_set order, and their sum.
struct WorstCaseVars {
    std::vector<ConstraintId> ids;
    nn::ad::Var nu;
    nn::ad::Var total;
};

WorstCaseVars worst_case_terms(nn::ad::Tape& tape, const nn::MlpVars& vars, const nn::MlpModel& model,
                               const nn::GridContext& ctx, const Box& box, const WorstCaseOptions& options = {});

struct WorstCaseResult {
    double l_wc = 0.0;  ///< weights.wc times the sum of all nu
    std::vector<ConstraintId> ids;
    Eigen::VectorXd nu;

    /// Largest nu of a kind, 0 when the head has none.
    double group_max(ConstraintKind kind) const;
    double group_sum(ConstraintKind kind) const;
};

WorstCaseResult worst_case_penalty(const nn::MlpModel& model, const nn::GridContext& ctx, const Box& box,
                                   const nn::LossWeights& weights, const WorstCaseOptions& options = {});

/// Training hook returning the summed nu for the parameters on the tape. Only the head and
/// normalization maps of model are used; weights come from the tape.
nn::WorstCaseHook make_worst_case_hook(const nn::MlpModel& model, const nn::GridContext& ctx, const Box& box,
                                       const WorstCaseOptions& options = {});

/// Bound on a single constraint over a (sub-)box, with per-input-coordinate magnitudes of
/// the linear bound coefficients that produced it.
struct ConstraintBound {
    double upper = 0.0;
    Eigen::VectorXd sensitivity;
};

ConstraintBound bound_constraint(const nn::MlpModel& model, const nn::GridContext& ctx, const Box& box,
                                 const ConstraintId& id, const WorstCaseOptions& options = {});

}  // namespace opfcert::bounds
