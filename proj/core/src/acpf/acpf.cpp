#include "opfcert/acpf/acpf.hpp"

#include <cmath>
#include <complex>

#include "opfcert/common/errors.hpp"

namespace opfcert::acpf {

using Eigen::Index;
using Eigen::VectorXd;

VectorXd VoltageState::magnitudes() const {
    return (real().array().square() + imag().array().square()).sqrt().matrix();
}

VoltageState VoltageState::flat(std::size_t num_buses) {
    const auto nb = static_cast<Index>(num_buses);
    VectorXd v = VectorXd::Zero(2 * nb);
    v.head(nb).setOnes();
    return VoltageState(std::move(v));
}

VoltageState VoltageState::from_polar(const VectorXd& magnitude, const VectorXd& angle) {
    const Index nb = magnitude.size();
    VectorXd v(2 * nb);
    for (Index n = 0; n < nb; ++n) {
        v(n) = magnitude(n) * std::cos(angle(n));
        v(nb + n) = magnitude(n) * std::sin(angle(n));
    }
    return VoltageState(std::move(v));
}

LoadScenario LoadScenario::nominal(const grid::GridModel& model) {
    LoadScenario s;
    const auto nd = static_cast<Index>(model.num_loads());
    s.p_d.resize(nd);
    s.q_d.resize(nd);
    for (Index d = 0; d < nd; ++d) {
        s.p_d(d) = model.loads()[static_cast<std::size_t>(d)].p_nominal;
        s.q_d(d) = model.loads()[static_cast<std::size_t>(d)].q_nominal;
    }
    return s;
}

LoadScenario LoadScenario::zero(const grid::GridModel& model) {
    const auto nd = static_cast<Index>(model.num_loads());
    return {VectorXd::Zero(nd), VectorXd::Zero(nd)};
}

LoadScenario LoadScenario::from_input(const VectorXd& x) {
    const Index nd = x.size() / 2;
    return {x.head(nd), x.tail(nd)};
}

VectorXd LoadScenario::to_input() const {
    VectorXd x(p_d.size() + q_d.size());
    x << p_d, q_d;
    return x;
}

VectorXd bus_demand_p(const grid::GridModel& model, const LoadScenario& s) {
    VectorXd out = VectorXd::Zero(static_cast<Index>(model.num_buses()));
    for (std::size_t d = 0; d < model.num_loads(); ++d)
        out(static_cast<Index>(model.load_bus(d))) += s.p_d(static_cast<Index>(d));
    return out;
}

VectorXd bus_demand_q(const grid::GridModel& model, const LoadScenario& s) {
    VectorXd out = VectorXd::Zero(static_cast<Index>(model.num_buses()));
    for (std::size_t d = 0; d < model.num_loads(); ++d)
        out(static_cast<Index>(model.load_bus(d))) += s.q_d(static_cast<Index>(d));
    return out;
}

VectorXd bus_currents(const grid::AdmittanceSet& adm, const VoltageState& v) { return adm.y_bus_rect * v.v; }

VectorXd branch_currents(const grid::AdmittanceSet& adm, const VoltageState& v) { return adm.y_l_rect * v.v; }

VectorXd branch_current_magnitudes(const grid::AdmittanceSet& adm, const VoltageState& v) {
    const VectorXd il = branch_currents(adm, v);
    const auto nl = static_cast<Index>(adm.num_branches());
    VectorXd out(nl);
    for (Index l = 0; l < nl; ++l) {
        const double from = std::hypot(il(l), il(nl + l));
        const double to = std::hypot(il(2 * nl + l), il(3 * nl + l));
        out(l) = std::max(from, to);
    }
    return out;
}

Injections bus_injections(const grid::AdmittanceSet& adm, const VoltageState& v) {
    const VectorXd i = bus_currents(adm, v);
    const Index nb = v.num_buses();
    const auto vr = v.real().array();
    const auto vi = v.imag().array();
    const auto ir = i.head(nb).array();
    const auto ii = i.tail(nb).array();
    return {(vr * ir + vi * ii).matrix(), (vi * ir - vr * ii).matrix()};
}

GeneratorDispatch generator_dispatch(const grid::GridModel& model, const grid::AdmittanceSet& adm,
                                     const VoltageState& v, const LoadScenario& s) {
    const auto inj = bus_injections(adm, v);
    const VectorXd pd = bus_demand_p(model, s);
    const VectorXd qd = bus_demand_q(model, s);
    const auto ng = static_cast<Index>(model.num_generators());
    GeneratorDispatch out{VectorXd(ng), VectorXd(ng)};
    for (Index g = 0; g < ng; ++g) {
        const auto n = static_cast<Index>(model.gen_bus(static_cast<std::size_t>(g)));
        out.p_g(g) = inj.p(n) + pd(n);
        out.q_g(g) = inj.q(n) + qd(n);
    }
    return out;
}

double ResidualSet::max_violation() const {
    double m = 0.0;
    for (const VectorXd* vec : {&pg_violation, &qg_violation, &vm_violation, &flow_violation, &balance_p, &balance_q})
        if (vec->size() > 0) m = std::max(m, vec->cwiseAbs().maxCoeff());
    return m;
}

ResidualSet constraint_residuals(const grid::GridModel& model, const grid::AdmittanceSet& adm,
                                 const VoltageState& v, const LoadScenario& s) {
    auto relu = [](double x) { return x > 0.0 ? x : 0.0; };
    ResidualSet r;
    const auto dispatch = generator_dispatch(model, adm, v, s);
    const auto ng = static_cast<Index>(model.num_generators());
    r.pg_violation.resize(ng);
    r.qg_violation.resize(ng);
    for (Index g = 0; g < ng; ++g) {
        const auto& gen = model.generators()[static_cast<std::size_t>(g)];
        r.pg_violation(g) = relu(dispatch.p_g(g) - gen.p_max) + relu(gen.p_min - dispatch.p_g(g));
        r.qg_violation(g) = relu(dispatch.q_g(g) - gen.q_max) + relu(gen.q_min - dispatch.q_g(g));
    }

    const VectorXd vm = v.magnitudes();
    const Index nb = v.num_buses();
    r.vm_violation.resize(nb);
    for (Index n = 0; n < nb; ++n) {
        const auto& bus = model.buses()[static_cast<std::size_t>(n)];
        r.vm_violation(n) = relu(vm(n) - bus.v_max) + relu(bus.v_min - vm(n));
    }

    const VectorXd mags = branch_current_magnitudes(adm, v);
    r.flow_violation.resize(mags.size());
    for (Index l = 0; l < mags.size(); ++l)
        r.flow_violation(l) = relu(mags(l) - model.branches()[static_cast<std::size_t>(l)].flow_limit);

    const auto inj = bus_injections(adm, v);
    const VectorXd pd = bus_demand_p(model, s);
    const VectorXd qd = bus_demand_q(model, s);
    const auto& non_gen = model.non_generator_buses();
    r.balance_p.resize(static_cast<Index>(non_gen.size()));
    r.balance_q.resize(static_cast<Index>(non_gen.size()));
    for (std::size_t k = 0; k < non_gen.size(); ++k) {
        const auto n = static_cast<Index>(non_gen[k]);
        r.balance_p(static_cast<Index>(k)) = inj.p(n) + pd(n);
        r.balance_q(static_cast<Index>(k)) = inj.q(n) + qd(n);
    }
    return r;
}

namespace {

struct BusRoles {
    std::vector<Index> pvpq;  // every non-slack bus
    std::vector<Index> pq;    // buses without a generator
};

BusRoles classify(const grid::GridModel& model) {
    BusRoles roles;
    for (std::size_t n = 0; n < model.num_buses(); ++n) {
        if (n == model.slack_index()) continue;
        roles.pvpq.push_back(static_cast<Index>(n));
        if (!model.gen_at_bus(n)) roles.pq.push_back(static_cast<Index>(n));
    }
    return roles;
}

Eigen::VectorXcd specified_injections(const grid::GridModel& model, const LoadScenario& s, const Setpoints& sp) {
    const VectorXd pd = bus_demand_p(model, s);
    const VectorXd qd = bus_demand_q(model, s);
    Eigen::VectorXcd spec(pd.size());
    for (Index n = 0; n < pd.size(); ++n) spec(n) = {-pd(n), -qd(n)};
    for (std::size_t g = 0; g < model.num_generators(); ++g) {
        const auto n = static_cast<Index>(model.gen_bus(g));
        spec(n) += sp.p_g(static_cast<Index>(g));
    }
    return spec;
}

VectorXd mismatch_vector(const Eigen::MatrixXcd& ybus, const Eigen::VectorXcd& V, const Eigen::VectorXcd& spec,
                         const BusRoles& roles) {
    const Eigen::VectorXcd s = V.array() * (ybus * V).conjugate().array();
    const Eigen::VectorXcd d = s - spec;
    VectorXd f(static_cast<Index>(roles.pvpq.size() + roles.pq.size()));
    Index k = 0;
    for (Index n : roles.pvpq) f(k++) = d(n).real();
    for (Index n : roles.pq) f(k++) = d(n).imag();
    return f;
}

}  // namespace

double power_flow_mismatch(const grid::GridModel& model, const grid::AdmittanceSet& adm, const LoadScenario& s,
                           const Setpoints& setpoints, const VoltageState& v) {
    const Index nb = v.num_buses();
    Eigen::VectorXcd V(nb);
    for (Index n = 0; n < nb; ++n) V(n) = {v.v(n), v.v(nb + n)};
    const auto roles = classify(model);
    double m = 0.0;
    const VectorXd f = mismatch_vector(adm.y_bus, V, specified_injections(model, s, setpoints), roles);
    if (f.size() > 0) m = f.cwiseAbs().maxCoeff();
    for (std::size_t g = 0; g < model.num_generators(); ++g)
        m = std::max(m, std::abs(std::abs(V(static_cast<Index>(model.gen_bus(g)))) -
                                 setpoints.v_g(static_cast<Index>(g))));
    return m;
}

PowerFlowResult newton_pf(const grid::GridModel& model, const grid::AdmittanceSet& adm, const LoadScenario& s,
                          const Setpoints& setpoints, const PowerFlowOptions& options) {
    using cd = std::complex<double>;
    const auto nb = static_cast<Index>(model.num_buses());
    const auto roles = classify(model);
    const auto npvpq = static_cast<Index>(roles.pvpq.size());
    const auto npq = static_cast<Index>(roles.pq.size());

    VectorXd vm = VectorXd::Ones(nb);
    VectorXd va = VectorXd::Zero(nb);
    if (options.init) {
        const VectorXd& v = options.init->v;
        for (Index n = 0; n < nb; ++n) {
            vm(n) = std::hypot(v(n), v(nb + n));
            va(n) = std::atan2(v(nb + n), v(n));
        }
    }
    for (std::size_t g = 0; g < model.num_generators(); ++g)
        vm(static_cast<Index>(model.gen_bus(g))) = setpoints.v_g(static_cast<Index>(g));
    va(static_cast<Index>(model.slack_index())) = 0.0;

    const Eigen::VectorXcd spec = specified_injections(model, s, setpoints);
    const Eigen::MatrixXcd& ybus = adm.y_bus;
    auto assemble = [&] {
        Eigen::VectorXcd V(nb);
        for (Index n = 0; n < nb; ++n) V(n) = std::polar(vm(n), va(n));
        return V;
    };

    Eigen::VectorXcd V = assemble();
    double norm = 0.0;
    for (int it = 1; it <= options.max_iterations; ++it) {
        const VectorXd f = mismatch_vector(ybus, V, spec, roles);
        norm = f.size() > 0 ? f.cwiseAbs().maxCoeff() : 0.0;
        if (!std::isfinite(norm)) throw NonConvergence(it, norm);
        if (norm <= options.tolerance) {
            PowerFlowResult out;
            VectorXd v(2 * nb);
            for (Index n = 0; n < nb; ++n) {
                v(n) = vm(n) * std::cos(va(n));
                v(nb + n) = vm(n) * std::sin(va(n));
            }
            out.state = VoltageState(std::move(v));
            out.iterations = it;
            out.mismatch = norm;
            return out;
        }
        if (it == options.max_iterations) break;

        // dS/dVa = j diag(V) conj(diag(I) - Y diag(V)), dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        const Eigen::VectorXcd I = ybus * V;
        const Eigen::VectorXcd Vn = V.array() / V.array().abs();
        Eigen::MatrixXcd ds_dva = -(ybus * V.asDiagonal().toDenseMatrix());
        ds_dva.diagonal() += I;
        ds_dva = (cd(0, 1) * V).asDiagonal() * ds_dva.conjugate();
        Eigen::MatrixXcd ds_dvm = V.asDiagonal() * (ybus * Vn.asDiagonal().toDenseMatrix()).conjugate();
        ds_dvm.diagonal() += I.conjugate().cwiseProduct(Vn);

        Eigen::MatrixXd J(npvpq + npq, npvpq + npq);
        for (Index r = 0; r < npvpq; ++r) {
            for (Index c = 0; c < npvpq; ++c) J(r, c) = ds_dva(roles.pvpq[r], roles.pvpq[c]).real();
            for (Index c = 0; c < npq; ++c) J(r, npvpq + c) = ds_dvm(roles.pvpq[r], roles.pq[c]).real();
        }
        for (Index r = 0; r < npq; ++r) {
            for (Index c = 0; c < npvpq; ++c) J(npvpq + r, c) = ds_dva(roles.pq[r], roles.pvpq[c]).imag();
            for (Index c = 0; c < npq; ++c) J(npvpq + r, npvpq + c) = ds_dvm(roles.pq[r], roles.pq[c]).imag();
        }
        const VectorXd dx = J.partialPivLu().solve(f);
        if (!dx.allFinite()) throw NonConvergence(it, norm);
        for (Index k = 0; k < npvpq; ++k) va(roles.pvpq[k]) -= dx(k);
        for (Index k = 0; k < npq; ++k) vm(roles.pq[k]) -= dx(npvpq + k);
        V = assemble();
    }
    throw NonConvergence(options.max_iterations, norm);
}

}  // namespace opfcert::acpf
