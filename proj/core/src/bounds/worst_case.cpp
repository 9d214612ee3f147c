#include "opfcert/bounds/worst_case.hpp"

#include <algorithm>
#include <cmath>

#include "opfcert/common/errors.hpp"

namespace opfcert::bounds {

namespace ad = nn::ad;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nn::GridContext;
using nn::Head;

const char* kind_name(ConstraintKind k) {
    switch (k) {
        case ConstraintKind::Pg: return "pg";
        case ConstraintKind::Qg: return "qg";
        case ConstraintKind::Vm: return "vm";
        case ConstraintKind::Vg: return "vg";
        case ConstraintKind::Flow: return "flow";
        case ConstraintKind::Balance: return "balance";
    }
    return "vm";
}

ConstraintKind parse_kind(std::string_view name) {
    for (auto k : {ConstraintKind::Pg, ConstraintKind::Qg, ConstraintKind::Vm, ConstraintKind::Vg, ConstraintKind::Flow,
                   ConstraintKind::Balance})
        if (name == kind_name(k)) return k;
    throw ValidationError("unknown constraint kind '" + std::string(name) + "'");
}

std::string ConstraintId::label() const { return std::string(kind_name(kind)) + "[" + std::to_string(index) + "]"; }

std::vector<ConstraintId> constraint_set(Head head, const GridContext& ctx) {
    std::vector<ConstraintId> ids;
    auto add = [&](ConstraintKind k, Index n) {
        for (Index i = 0; i < n; ++i) ids.push_back({k, i});
    };
    add(ConstraintKind::Pg, ctx.num_generators);
    if (head == Head::Power) {
        add(ConstraintKind::Vg, ctx.num_generators);
        return ids;
    }
    add(ConstraintKind::Qg, ctx.num_generators);
    add(ConstraintKind::Vm, ctx.num_buses);
    add(ConstraintKind::Flow, ctx.num_branches);
    for (Index n : ctx.non_gen_bus) ids.push_back({ConstraintKind::Balance, n});
    return ids;
}

namespace {

double relu(double x) { return std::max(x, 0.0); }
double box_excess(double lo, double hi, double min, double max) { return std::max(relu(hi - max), relu(min - lo)); }
double square_max(Interval x) { return std::max(x.lo * x.lo, x.hi * x.hi); }

void check_head(const nn::MlpModel& model, const GridContext& ctx) {
    if (model.input_dim() != ctx.input_dim() || model.output_dim() != ctx.output_dim(model.head))
        throw HeadMismatch("model dimensions do not match the network");
}

void check_id(Head head, const GridContext& ctx, const ConstraintId& id) {
    Index limit = 0;
    bool ok = true;
    switch (id.kind) {
        case ConstraintKind::Pg: limit = ctx.num_generators; break;
        case ConstraintKind::Vg: limit = ctx.num_generators; ok = head == Head::Power; break;
        case ConstraintKind::Qg: limit = ctx.num_generators; ok = head == Head::Voltage; break;
        case ConstraintKind::Vm: limit = ctx.num_buses; ok = head == Head::Voltage; break;
        case ConstraintKind::Flow: limit = ctx.num_branches; ok = head == Head::Voltage; break;
        case ConstraintKind::Balance:
            limit = ctx.num_buses;
            ok = head == Head::Voltage &&
                 std::find(ctx.non_gen_bus.begin(), ctx.non_gen_bus.end(), id.index) != ctx.non_gen_bus.end();
            break;
    }
    if (!ok || id.index < 0 || id.index >= limit)
        throw ValidationError("constraint " + id.label() + " does not exist for a " + nn::head_name(head) + " head");
}

// Demand at bus position n over the box (at most one load per bus).
Interval bus_demand(const GridContext& ctx, const Box& box, Index n, bool reactive) {
    Interval d{0.0, 0.0};
    const Index nd = ctx.num_loads;
    for (Index k = 0; k < nd; ++k)
        if (ctx.load_to_bus(n, k) != 0.0) {
            const Index col = reactive ? nd + k : k;
            d = {box.lower(col), box.upper(col)};
        }
    return d;
}

double bus_demand_at(const GridContext& ctx, const VectorXd& x, Index n, bool reactive) {
    const Index nd = ctx.num_loads;
    return ctx.load_to_bus.row(n).dot(reactive ? x.tail(nd) : x.head(nd));
}

}  // namespace

double violation(const nn::MlpModel& model, const GridContext& ctx, const VectorXd& x, const ConstraintId& id) {
    check_head(model, ctx);
    check_id(model.head, ctx, id);
    const VectorXd y = nn::predict(model, x);
    const Index i = id.index;
    if (model.head == Head::Power) {
        const Index ng = ctx.num_generators;
        if (id.kind == ConstraintKind::Pg) return box_excess(y(i), y(i), ctx.p_min(i), ctx.p_max(i));
        const Index bus = ctx.gen_bus[static_cast<std::size_t>(i)];
        return box_excess(y(ng + i), y(ng + i), ctx.v_min(bus), ctx.v_max(bus));
    }
    const Index nb = ctx.num_buses;
    const Index nl = ctx.num_branches;
    auto injection = [&](Index n) {
        const double ir = ctx.y_bus_rect.row(n).dot(y), ii = ctx.y_bus_rect.row(nb + n).dot(y);
        const double p = y(n) * ir + y(nb + n) * ii;
        const double q = y(nb + n) * ir - y(n) * ii;
        return std::pair{p + bus_demand_at(ctx, x, n, false), q + bus_demand_at(ctx, x, n, true)};
    };
    switch (id.kind) {
        case ConstraintKind::Pg: {
            const double pg = injection(ctx.gen_bus[static_cast<std::size_t>(i)]).first;
            return box_excess(pg, pg, ctx.p_min(i), ctx.p_max(i));
        }
        case ConstraintKind::Qg: {
            const double qg = injection(ctx.gen_bus[static_cast<std::size_t>(i)]).second;
            return box_excess(qg, qg, ctx.q_min(i), ctx.q_max(i));
        }
        case ConstraintKind::Vm: {
            const double vm = std::hypot(y(i), y(nb + i));
            return box_excess(vm, vm, ctx.v_min(i), ctx.v_max(i));
        }
        case ConstraintKind::Flow: {
            const VectorXd il = ctx.y_l_rect * y;
            const double mag = std::max(std::hypot(il(i), il(nl + i)), std::hypot(il(2 * nl + i), il(3 * nl + i)));
            return relu(mag - ctx.flow_limit(i));
        }
        case ConstraintKind::Balance: {
            const auto [p, q] = injection(i);
            return p * p + q * q;
        }
        case ConstraintKind::Vg: break;
    }
    return 0.0;
}

VectorXd violations(const nn::MlpModel& model, const GridContext& ctx, const VectorXd& x) {
    const auto ids = constraint_set(model.head, ctx);
    VectorXd out(static_cast<Index>(ids.size()));
    for (std::size_t k = 0; k < ids.size(); ++k) out(static_cast<Index>(k)) = violation(model, ctx, x, ids[k]);
    return out;
}

namespace {

ad::Var constant_col(ad::Tape& t, const VectorXd& v) { return t.constant(v); }

// max(relu(hi - max), relu(min - lo)) elementwise.
ad::Var excess(ad::Tape& t, const ad::Var& lo, const ad::Var& hi, const VectorXd& min, const VectorXd& max) {
    return ad::max(ad::relu(ad::sub(hi, constant_col(t, max))), ad::relu(ad::sub(constant_col(t, min), lo)));
}

struct MagnitudeVars {
    ad::Var lo, hi;
};

MagnitudeVars magnitude(const ad::Var& rl, const ad::Var& rh, const ad::Var& il, const ad::Var& ih, NormMode mode) {
    const ad::Var a_max = ad_ops::max_abs(rl, rh), b_max = ad_ops::max_abs(il, ih);
    const ad::Var a_min = ad_ops::min_abs(rl, rh), b_min = ad_ops::min_abs(il, ih);
    if (mode == NormMode::Enclosure) return {ad_ops::l_under(a_min, b_min), ad_ops::l_over(a_max, b_max)};
    return {ad::sqrt(ad::add(ad::square(a_min), ad::square(b_min))),
            ad::sqrt(ad::add(ad::square(a_max), ad::square(b_max)))};
}

WorstCaseVars power_terms(ad::Tape& t, const nn::MlpVars& vars, const nn::MlpModel& model, const GridContext& ctx,
                          const Box& box, const WorstCaseOptions& options) {
    const Index ng = ctx.num_generators;
    const HiddenBounds hb = hidden_bounds(t, vars, model, box, options.intermediate);
    const AffineVars a = crown(t, vars, model, box, hb, MatrixXd::Identity(2 * ng, 2 * ng), VectorXd());
    VectorXd vg_min(ng), vg_max(ng);
    for (Index g = 0; g < ng; ++g) {
        vg_min(g) = ctx.v_min(ctx.gen_bus[static_cast<std::size_t>(g)]);
        vg_max(g) = ctx.v_max(ctx.gen_bus[static_cast<std::size_t>(g)]);
    }
    WorstCaseVars w;
    w.ids = constraint_set(Head::Power, ctx);
    w.nu = ad::vstack({excess(t, ad::rows(a.lo, 0, ng), ad::rows(a.hi, 0, ng), ctx.p_min, ctx.p_max),
                       excess(t, ad::rows(a.lo, ng, ng), ad::rows(a.hi, ng, ng), vg_min, vg_max)});
    w.total = ad::sum(w.nu);
    return w;
}

WorstCaseVars voltage_terms(ad::Tape& t, const nn::MlpVars& vars, const nn::MlpModel& model, const GridContext& ctx,
                            const Box& box, const WorstCaseOptions& options) {
    const Index nb = ctx.num_buses, nl = ctx.num_branches, nd = ctx.num_loads;
    // Outputs v, then bus currents Y v, then branch currents Y_l v.
    MatrixXd spec(4 * nb + 4 * nl, 2 * nb);
    spec << MatrixXd::Identity(2 * nb, 2 * nb), ctx.y_bus_rect, ctx.y_l_rect;
    const HiddenBounds hb = hidden_bounds(t, vars, model, box, options.intermediate);
    const AffineVars a = crown(t, vars, model, box, hb, spec, VectorXd());
    auto lo = [&](Index start, Index n) { return ad::rows(a.lo, start, n); };
    auto hi = [&](Index start, Index n) { return ad::rows(a.hi, start, n); };
    const ad::Var vr_l = lo(0, nb), vr_h = hi(0, nb), vi_l = lo(nb, nb), vi_h = hi(nb, nb);
    const ad::Var ir_l = lo(2 * nb, nb), ir_h = hi(2 * nb, nb), ii_l = lo(3 * nb, nb), ii_h = hi(3 * nb, nb);
    const Index f0 = 4 * nb;

    const MagnitudeVars vm = magnitude(vr_l, vr_h, vi_l, vi_h, options.norm);
    const ad::Var nu_vm = excess(t, vm.lo, vm.hi, ctx.v_min, ctx.v_max);

    const MagnitudeVars mf = magnitude(lo(f0, nl), hi(f0, nl), lo(f0 + nl, nl), hi(f0 + nl, nl), options.norm);
    const MagnitudeVars mt =
        magnitude(lo(f0 + 2 * nl, nl), hi(f0 + 2 * nl, nl), lo(f0 + 3 * nl, nl), hi(f0 + 3 * nl, nl), options.norm);
    const ad::Var nu_flow = ad::relu(ad::sub(ad::max(mf.hi, mt.hi), constant_col(t, ctx.flow_limit)));

    // p = vr ir + vi ii, q = vi ir - vr ii, each product over its interval box.
    const auto [a_lo, a_hi] = ad_ops::product(vr_l, vr_h, ir_l, ir_h);
    const auto [b_lo, b_hi] = ad_ops::product(vi_l, vi_h, ii_l, ii_h);
    const auto [c_lo, c_hi] = ad_ops::product(vi_l, vi_h, ir_l, ir_h);
    const auto [d_lo, d_hi] = ad_ops::product(vr_l, vr_h, ii_l, ii_h);
    const ad::Var pd_lo = t.constant(ctx.load_to_bus * box.lower.head(nd));
    const ad::Var pd_hi = t.constant(ctx.load_to_bus * box.upper.head(nd));
    const ad::Var qd_lo = t.constant(ctx.load_to_bus * box.lower.tail(nd));
    const ad::Var qd_hi = t.constant(ctx.load_to_bus * box.upper.tail(nd));
    const ad::Var p_lo = ad::add(ad::add(a_lo, b_lo), pd_lo), p_hi = ad::add(ad::add(a_hi, b_hi), pd_hi);
    const ad::Var q_lo = ad::add(ad::sub(c_lo, d_hi), qd_lo), q_hi = ad::add(ad::sub(c_hi, d_lo), qd_hi);

    const ad::Var nu_pg = excess(t, ad::gather_rows(p_lo, ctx.gen_bus), ad::gather_rows(p_hi, ctx.gen_bus),
                                 ctx.p_min, ctx.p_max);
    const ad::Var nu_qg = excess(t, ad::gather_rows(q_lo, ctx.gen_bus), ad::gather_rows(q_hi, ctx.gen_bus),
                                 ctx.q_min, ctx.q_max);

    std::vector<ad::Var> parts{nu_pg, nu_qg, nu_vm, nu_flow};
    if (!ctx.non_gen_bus.empty()) {
        auto square_max = [&](const ad::Var& l, const ad::Var& h) {
            return ad::max(ad::square(ad::gather_rows(l, ctx.non_gen_bus)), ad::square(ad::gather_rows(h, ctx.non_gen_bus)));
        };
        parts.push_back(ad::add(square_max(p_lo, p_hi), square_max(q_lo, q_hi)));
    }
    WorstCaseVars w;
    w.ids = constraint_set(Head::Voltage, ctx);
    w.nu = ad::vstack(parts);
    w.total = ad::sum(w.nu);
    return w;
}

}  // namespace

WorstCaseVars worst_case_terms(ad::Tape& tape, const nn::MlpVars& vars, const nn::MlpModel& model,
                               const GridContext& ctx, const Box& box, const WorstCaseOptions& options) {
    check_head(model, ctx);
    return model.head == Head::Power ? power_terms(tape, vars, model, ctx, box, options)
                                     : voltage_terms(tape, vars, model, ctx, box, options);
}

double WorstCaseResult::group_max(ConstraintKind kind) const {
    double m = 0.0;
    for (std::size_t k = 0; k < ids.size(); ++k)
        if (ids[k].kind == kind) m = std::max(m, nu(static_cast<Index>(k)));
    return m;
}

double WorstCaseResult::group_sum(ConstraintKind kind) const {
    double s = 0.0;
    for (std::size_t k = 0; k < ids.size(); ++k)
        if (ids[k].kind == kind) s += nu(static_cast<Index>(k));
    return s;
}

WorstCaseResult worst_case_penalty(const nn::MlpModel& model, const GridContext& ctx, const Box& box,
                                   const nn::LossWeights& weights, const WorstCaseOptions& options) {
    ad::Tape t;
    const nn::MlpVars vars = nn::bind(model, t, false);
    const WorstCaseVars w = worst_case_terms(t, vars, model, ctx, box, options);
    WorstCaseResult r;
    r.ids = w.ids;
    r.nu = w.nu.value().col(0);
    r.l_wc = weights.wc * w.total.scalar();
    return r;
}

nn::WorstCaseHook make_worst_case_hook(const nn::MlpModel& model, const GridContext& ctx, const Box& box,
                                       const WorstCaseOptions& options) {
    check_head(model, ctx);
    return [model, ctx, box, options](ad::Tape& tape, const nn::MlpVars& vars) {
        return worst_case_terms(tape, vars, model, ctx, box, options).total;
    };
}

ConstraintBound bound_constraint(const nn::MlpModel& model, const GridContext& ctx, const Box& box,
                                 const ConstraintId& id, const WorstCaseOptions& options) {
    check_head(model, ctx);
    check_id(model.head, ctx, id);
    const Index i = id.index;
    const Index nb = ctx.num_buses, nl = ctx.num_branches, ng = ctx.num_generators;
    const Index out = model.output_dim();
    auto unit = [&](Index k) {
        Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(out);
        r(k) = 1.0;
        return r;
    };
    std::vector<Eigen::RowVectorXd> rows;
    Index bus = 0;
    if (model.head == Head::Power) {
        rows.push_back(unit(id.kind == ConstraintKind::Pg ? i : ng + i));
    } else if (id.kind == ConstraintKind::Vm) {
        rows = {unit(i), unit(nb + i)};
    } else if (id.kind == ConstraintKind::Flow) {
        for (Index b = 0; b < 4; ++b) rows.push_back(ctx.y_l_rect.row(b * nl + i));
    } else {
        bus = id.kind == ConstraintKind::Balance ? i : ctx.gen_bus[static_cast<std::size_t>(i)];
        rows = {unit(bus), unit(nb + bus), ctx.y_bus_rect.row(bus), ctx.y_bus_rect.row(nb + bus)};
    }
    MatrixXd spec(static_cast<Index>(rows.size()), out);
    for (std::size_t r = 0; r < rows.size(); ++r) spec.row(static_cast<Index>(r)) = rows[r];
    const AffineBounds a = crown_bounds(model, box, spec, VectorXd(), options.intermediate);
    auto iv = [&](Index r) { return Interval{a.lo(r), a.hi(r)}; };

    ConstraintBound b;
    b.sensitivity = (a.upper_a.cwiseAbs().colwise().sum() + a.lower_a.cwiseAbs().colwise().sum()).transpose();
    if (model.head == Head::Power) {
        if (id.kind == ConstraintKind::Pg) {
            b.upper = box_excess(a.lo(0), a.hi(0), ctx.p_min(i), ctx.p_max(i));
        } else {
            const Index gb = ctx.gen_bus[static_cast<std::size_t>(i)];
            b.upper = box_excess(a.lo(0), a.hi(0), ctx.v_min(gb), ctx.v_max(gb));
        }
        return b;
    }
    switch (id.kind) {
        case ConstraintKind::Vm: {
            const Interval m = magnitude_bounds(iv(0), iv(1), options.norm);
            b.upper = box_excess(m.lo, m.hi, ctx.v_min(i), ctx.v_max(i));
            break;
        }
        case ConstraintKind::Flow: {
            const double mag =
                std::max(magnitude_bounds(iv(0), iv(1), options.norm).hi, magnitude_bounds(iv(2), iv(3), options.norm).hi);
            b.upper = relu(mag - ctx.flow_limit(i));
            break;
        }
        default: {
            const Interval a1 = mccormick_bilinear(iv(0), iv(2)), b1 = mccormick_bilinear(iv(1), iv(3));
            const Interval c1 = mccormick_bilinear(iv(1), iv(2)), d1 = mccormick_bilinear(iv(0), iv(3));
            const Interval pd = bus_demand(ctx, box, bus, false), qd = bus_demand(ctx, box, bus, true);
            const Interval p{a1.lo + b1.lo + pd.lo, a1.hi + b1.hi + pd.hi};
            const Interval q{c1.lo - d1.hi + qd.lo, c1.hi - d1.lo + qd.hi};
            if (id.kind == ConstraintKind::Pg)
                b.upper = box_excess(p.lo, p.hi, ctx.p_min(i), ctx.p_max(i));
            else if (id.kind == ConstraintKind::Qg)
                b.upper = box_excess(q.lo, q.hi, ctx.q_min(i), ctx.q_max(i));
            else
                b.upper = square_max(p) + square_max(q);
            break;
        }
    }
    return b;
}

}  // namespace opfcert::bounds
