#include "opfcert/nn/losses.hpp"

#include "opfcert/common/errors.hpp"

namespace opfcert::nn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

GridContext::GridContext(const grid::GridModel& model, const grid::AdmittanceSet& adm)
    : num_buses(static_cast<Index>(model.num_buses())),
      num_generators(static_cast<Index>(model.num_generators())),
      num_loads(static_cast<Index>(model.num_loads())),
      num_branches(static_cast<Index>(model.num_branches())),
      y_bus_rect(adm.y_bus_rect),
      y_l_rect(adm.y_l_rect) {
    for (std::size_t g = 0; g < model.num_generators(); ++g) gen_bus.push_back(static_cast<Index>(model.gen_bus(g)));
    for (auto n : model.non_generator_buses()) non_gen_bus.push_back(static_cast<Index>(n));
    load_to_bus = MatrixXd::Zero(num_buses, num_loads);
    for (std::size_t d = 0; d < model.num_loads(); ++d)
        load_to_bus(static_cast<Index>(model.load_bus(d)), static_cast<Index>(d)) = 1.0;
    p_min.resize(num_generators);
    p_max.resize(num_generators);
    q_min.resize(num_generators);
    q_max.resize(num_generators);
    for (Index g = 0; g < num_generators; ++g) {
        const auto& gen = model.generators()[static_cast<std::size_t>(g)];
        p_min(g) = gen.p_min;
        p_max(g) = gen.p_max;
        q_min(g) = gen.q_min;
        q_max(g) = gen.q_max;
    }
    v_min.resize(num_buses);
    v_max.resize(num_buses);
    for (Index n = 0; n < num_buses; ++n) {
        v_min(n) = model.buses()[static_cast<std::size_t>(n)].v_min;
        v_max(n) = model.buses()[static_cast<std::size_t>(n)].v_max;
    }
    flow_limit.resize(num_branches);
    for (Index l = 0; l < num_branches; ++l) flow_limit(l) = model.branches()[static_cast<std::size_t>(l)].flow_limit;
}

void LossWeights::validate() const {
    for (double w : {mse, pg, qg, vm, flow, bal, wc})
        if (!(w >= 0.0)) throw ValidationError("loss weights must be nonnegative");
}

double LossTerms::weighted(const LossWeights& w) const {
    return w.mse * mse + w.pg * pg + w.qg * qg + w.vm * vm + w.flow * flow + w.bal * bal + w.wc * wc;
}

Batch make_batch(const data::LabeledDataset& data, Head head, const std::vector<std::size_t>& indices) {
    const auto n = static_cast<Index>(indices.size());
    const auto nd = static_cast<Index>(data.load_bus_ids.size());
    const auto ng = static_cast<Index>(data.gen_bus_ids.size());
    const auto nb = static_cast<Index>(data.bus_ids.size());
    Batch b;
    b.inputs.resize(2 * nd, n);
    b.targets.resize(head == Head::Power ? 2 * ng : 2 * nb, n);
    for (Index c = 0; c < n; ++c) {
        const auto& s = data.samples[indices[static_cast<std::size_t>(c)]];
        b.inputs.col(c) << s.load.p_d, s.load.q_d;
        if (head == Head::Power)
            b.targets.col(c) << s.p_g, s.v_g;
        else
            b.targets.col(c) = s.v.v;
    }
    return b;
}

Batch split_batch(const data::LabeledDataset& data, Head head, data::Split split) {
    return make_batch(data, head, data.indices(split));
}

double penalty_relu(const VectorXd& z, const VectorXd& lo, const VectorXd& hi) {
    return (z - hi).cwiseMax(0.0).squaredNorm() + (lo - z).cwiseMax(0.0).squaredNorm();
}

double penalty_relu(const VectorXd& z, double lo, double hi) {
    return penalty_relu(z, VectorXd::Constant(z.size(), lo), VectorXd::Constant(z.size(), hi));
}

ad::Var penalty_relu(const ad::Var& z, const VectorXd& lo, const VectorXd& hi) {
    ad::Tape& t = *z.tape();
    const ad::Var above = ad::relu(ad::sub(z, t.constant(hi.replicate(1, z.cols()))));
    const ad::Var below = ad::relu(ad::sub(t.constant(lo.replicate(1, z.cols())), z));
    return ad::add(ad::sum(ad::square(above)), ad::sum(ad::square(below)));
}

namespace {

void check_shapes(const MlpModel& model, const GridContext& ctx, const Batch& batch, Head expected) {
    if (model.head != expected)
        throw HeadMismatch(std::string("loss expects a ") + head_name(expected) + " head, model has a " +
                           head_name(model.head) + " head");
    if (model.input_dim() != ctx.input_dim() || model.output_dim() != ctx.output_dim(expected))
        throw HeadMismatch("model dimensions do not match the network");
    if (batch.inputs.rows() != ctx.input_dim() || batch.targets.rows() != ctx.output_dim(expected) ||
        batch.inputs.cols() != batch.targets.cols() || batch.size() == 0)
        throw HeadMismatch("batch dimensions do not match the model");
}

struct Outputs {
    ad::Var raw;       ///< normalized network output
    ad::Var physical;  ///< denormalized
    ad::Var mse;
};

Outputs run(ad::Tape& t, const MlpVars& vars, const MlpModel& model, const Batch& batch) {
    const MatrixXd xn = (batch.inputs.colwise() - model.input_norm.shift).array().colwise() /
                        model.input_norm.scale.array();
    const MatrixXd yn = (batch.targets.colwise() - model.output_norm.shift).array().colwise() /
                        model.output_norm.scale.array();
    Outputs o;
    o.raw = forward(vars, t.constant(xn));
    o.physical = ad::add_col(ad::scale_rows(o.raw, t.constant(model.output_norm.scale)),
                             t.constant(model.output_norm.shift));
    o.mse = ad::mean(ad::square(ad::sub(o.raw, t.constant(yn))));
    return o;
}

struct Weighted {
    ad::Var total;
    bool empty = true;

    void add(const ad::Var& term, double w) {
        if (w == 0.0) return;
        const ad::Var part = ad::scale(term, w);
        total = empty ? part : ad::add(total, part);
        empty = false;
    }
    ad::Var finish(ad::Tape& t) { return empty ? t.constant(MatrixXd::Zero(1, 1)) : total; }
};

}  // namespace

LossResult loss_power(ad::Tape& t, const MlpVars& vars, const MlpModel& model, const GridContext& ctx,
                      const Batch& batch, const LossWeights& weights) {
    check_shapes(model, ctx, batch, Head::Power);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    const Index ng = ctx.num_generators;
    const Outputs o = run(t, vars, model, batch);

    VectorXd vg_min(ng), vg_max(ng);
    for (Index g = 0; g < ng; ++g) {
        vg_min(g) = ctx.v_min(ctx.gen_bus[static_cast<std::size_t>(g)]);
        vg_max(g) = ctx.v_max(ctx.gen_bus[static_cast<std::size_t>(g)]);
    }
    const ad::Var pg = ad::scale(penalty_relu(ad::rows(o.physical, 0, ng), ctx.p_min, ctx.p_max), inv_n);
    const ad::Var vg = ad::scale(penalty_relu(ad::rows(o.physical, ng, ng), vg_min, vg_max), inv_n);

    LossResult r;
    r.terms.mse = o.mse.scalar();
    r.terms.pg = pg.scalar();
    r.terms.vm = vg.scalar();
    Weighted w;
    w.add(o.mse, weights.mse);
    w.add(pg, weights.pg);
    w.add(vg, weights.vm);
    r.total = w.finish(t);
    return r;
}

LossResult loss_voltage(ad::Tape& t, const MlpVars& vars, const MlpModel& model, const GridContext& ctx,
                        const Batch& batch, const LossWeights& weights) {
    check_shapes(model, ctx, batch, Head::Voltage);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    const Index nb = ctx.num_buses;
    const Index nl = ctx.num_branches;
    const Outputs o = run(t, vars, model, batch);

    const ad::Var v = o.physical;
    const ad::Var i = ad::matmul(t.constant(ctx.y_bus_rect), v);
    const ad::Var vr = ad::rows(v, 0, nb), vi = ad::rows(v, nb, nb);
    const ad::Var ir = ad::rows(i, 0, nb), ii = ad::rows(i, nb, nb);
    const ad::Var p = ad::add(ad::mul(vr, ir), ad::mul(vi, ii));
    const ad::Var q = ad::sub(ad::mul(vi, ir), ad::mul(vr, ii));
    const Index nd = ctx.num_loads;
    const ad::Var pd = t.constant(ctx.load_to_bus * batch.inputs.topRows(nd));
    const ad::Var qd = t.constant(ctx.load_to_bus * batch.inputs.bottomRows(nd));
    // Net injection plus local demand: generator output at generator buses, mismatch elsewhere.
    const ad::Var p_net = ad::add(p, pd);
    const ad::Var q_net = ad::add(q, qd);

    const ad::Var pg = ad::scale(penalty_relu(ad::gather_rows(p_net, ctx.gen_bus), ctx.p_min, ctx.p_max), inv_n);
    const ad::Var qg = ad::scale(penalty_relu(ad::gather_rows(q_net, ctx.gen_bus), ctx.q_min, ctx.q_max), inv_n);
    const ad::Var vm_mag = ad::sqrt(ad::add(ad::square(vr), ad::square(vi)));
    const ad::Var vm = ad::scale(penalty_relu(vm_mag, ctx.v_min, ctx.v_max), inv_n);

    const ad::Var il = ad::matmul(t.constant(ctx.y_l_rect), v);
    auto magnitude = [&](Index block) {
        return ad::sqrt(ad::add(ad::square(ad::rows(il, 2 * block * nl, nl)),
                                ad::square(ad::rows(il, (2 * block + 1) * nl, nl))));
    };
    const VectorXd no_floor = VectorXd::Constant(nl, -1.0);
    const ad::Var flow = ad::scale(ad::add(penalty_relu(magnitude(0), no_floor, ctx.flow_limit),
                                           penalty_relu(magnitude(1), no_floor, ctx.flow_limit)),
                                   inv_n);

    ad::Var bal = t.constant(MatrixXd::Zero(1, 1));
    if (!ctx.non_gen_bus.empty())
        bal = ad::scale(ad::add(ad::sum(ad::square(ad::gather_rows(p_net, ctx.non_gen_bus))),
                                ad::sum(ad::square(ad::gather_rows(q_net, ctx.non_gen_bus)))),
                        inv_n);

    LossResult r;
    r.terms.mse = o.mse.scalar();
    r.terms.pg = pg.scalar();
    r.terms.qg = qg.scalar();
    r.terms.vm = vm.scalar();
    r.terms.flow = flow.scalar();
    r.terms.bal = bal.scalar();
    Weighted w;
    w.add(o.mse, weights.mse);
    w.add(pg, weights.pg);
    w.add(qg, weights.qg);
    w.add(vm, weights.vm);
    w.add(flow, weights.flow);
    w.add(bal, weights.bal);
    r.total = w.finish(t);
    return r;
}

LossResult loss(ad::Tape& tape, const MlpVars& vars, const MlpModel& model, const GridContext& ctx,
                const Batch& batch, const LossWeights& weights) {
    return model.head == Head::Power ? loss_power(tape, vars, model, ctx, batch, weights)
                                     : loss_voltage(tape, vars, model, ctx, batch, weights);
}

LossTerms evaluate_loss(const MlpModel& model, const GridContext& ctx, const Batch& batch,
                        const LossWeights& weights) {
    ad::Tape tape;
    const MlpVars vars = bind(model, tape, false);
    return loss(tape, vars, model, ctx, batch, weights).terms;
}

}  // namespace opfcert::nn
