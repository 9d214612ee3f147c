#include <cmath>
#include <complex>
#include <random>

#include <gtest/gtest.h>

#include "opfcert/acpf/acpf.hpp"
#include "opfcert/common/errors.hpp"
#include "test_cases.hpp"

namespace opfcert::acpf {
namespace {

using grid::build_admittances;
using testing::load_bundled_case;

Eigen::VectorXd random_state(std::mt19937_64& rng, Eigen::Index nb) {
    std::uniform_real_distribution<double> mag(0.85, 1.15);
    std::uniform_real_distribution<double> ang(-0.6, 0.6);
    Eigen::VectorXd m(nb), a(nb);
    for (Eigen::Index n = 0; n < nb; ++n) {
        m(n) = mag(rng);
        a(n) = ang(rng);
    }
    return VoltageState::from_polar(m, a).v;
}

TEST(BusCurrents, FlatStartUnloadedTwoBusIsZero) {
    const auto adm = build_admittances(testing::two_bus_model(0.0, 0.1, 0.0, 0.0, 0.0));
    EXPECT_TRUE(bus_currents(adm, VoltageState::flat(2)).isZero(1e-14));
    EXPECT_TRUE(branch_currents(adm, VoltageState::flat(2)).isZero(1e-14));
}

TEST(BusCurrents, TwoBusHandAlgebra) {
    const auto adm = build_admittances(testing::two_bus_model(0.0, 0.1, 0.0, 0.0, 0.0));
    VoltageState v(Eigen::Vector4d(1.0, 0.95, 0.0, 0.0));
    const auto i = bus_currents(adm, v);
    EXPECT_NEAR(i(0), 0.0, 1e-12);
    EXPECT_NEAR(i(1), 0.0, 1e-12);
    EXPECT_NEAR(i(2), -0.5, 1e-12);
    EXPECT_NEAR(i(3), 0.5, 1e-12);

    const auto il = branch_currents(adm, v);
    ASSERT_EQ(il.size(), 4);
    EXPECT_NEAR(il(0), 0.0, 1e-12);
    EXPECT_NEAR(il(1), -0.5, 1e-12);
    EXPECT_NEAR(il(2), 0.0, 1e-12);
    EXPECT_NEAR(il(3), 0.5, 1e-12);
}

TEST(BusCurrents, Linearity) {
    const auto adm = build_admittances(load_bundled_case("case14"));
    std::mt19937_64 rng(3);
    VoltageState v(random_state(rng, 14));
    VoltageState twice(2.0 * v.v);
    EXPECT_TRUE(bus_currents(adm, twice).isApprox(2.0 * bus_currents(adm, v), 1e-14));
}

TEST(BranchCurrents, StackingOrderOnTwoBranches) {
    std::vector<grid::Bus> buses{{1, 0.9, 1.1, 0, 0, true}, {2, 0.9, 1.1, 0, 0, false}, {3, 0.9, 1.1, 0, 0, false}};
    std::vector<grid::Generator> gens{{1, 0, 1, -1, 1, 10, 1.0}};
    std::vector<grid::Branch> branches{{1, 2, 0, 0.1, 0, 1, 1}, {2, 3, 0, 0.5, 0, 1, 1}};
    const grid::GridModel model(buses, gens, branches, {}, 100.0);
    const auto adm = build_admittances(model);
    VoltageState v(Eigen::VectorXd::Zero(6));
    v.v << 1.0, 0.9, 0.8, 0.0, 0.0, 0.0;
    const auto il = branch_currents(adm, v);
    ASSERT_EQ(il.size(), 8);
    // i_f of branch 0 = -j10 (1 - 0.9) = -j1, branch 1: -j2 (0.9 - 0.8) = -j0.2; i_t is the negation.
    const Eigen::VectorXd expected = (Eigen::VectorXd(8) << 0, 0, -1.0, -0.2, 0, 0, 1.0, 0.2).finished();
    EXPECT_TRUE(il.isApprox(expected, 1e-12)) << il.transpose();
}

TEST(BusInjections, MatchesComplexOracle) {
    const auto adm = build_admittances(load_bundled_case("case14"));
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        VoltageState v(random_state(rng, 14));
        const auto inj = bus_injections(adm, v);
        Eigen::VectorXcd V(14);
        for (int n = 0; n < 14; ++n) V(n) = {v.v(n), v.v(14 + n)};
        const Eigen::VectorXcd s = V.array() * (adm.y_bus * V).conjugate().array();
        for (int n = 0; n < 14; ++n) {
            EXPECT_NEAR(inj.p(n), s(n).real(), 1e-12 * (1.0 + std::abs(s(n))));
            EXPECT_NEAR(inj.q(n), s(n).imag(), 1e-12 * (1.0 + std::abs(s(n))));
        }
    }
}

TEST(BusInjections, FlatStartUnloadedIsZero) {
    const auto adm = build_admittances(testing::two_bus_model(0.0, 0.1, 0.0, 0.0, 0.0));
    const auto inj = bus_injections(adm, VoltageState::flat(2));
    EXPECT_TRUE(inj.p.isZero(1e-14));
    EXPECT_TRUE(inj.q.isZero(1e-14));
}

TEST(BusInjections, TwoBusAgainstComplexOracle) {
    const auto adm = build_admittances(testing::two_bus_model(0.0, 0.1, 0.0, 0.0, 0.0));
    VoltageState v(Eigen::Vector4d(1.0, 0.95, 0.0, 0.0));
    const auto inj = bus_injections(adm, v);
    // S_2 = V_2 conj(I_2) = 0.95 * conj(j0.5) = -j0.475
    EXPECT_NEAR(inj.p(1), 0.0, 1e-12);
    EXPECT_NEAR(inj.q(1), -0.475, 1e-12);
    EXPECT_NEAR(inj.q(0), 0.5, 1e-12);
}

grid::GridModel random_radial_network(std::mt19937_64& rng, bool resistive) {
    std::uniform_real_distribution<double> impedance(0.05, 0.5);
    std::uniform_real_distribution<double> shunt(-0.2, 0.2);
    std::vector<grid::Bus> buses;
    for (int n = 0; n < 6; ++n) {
        const double sh = shunt(rng);
        buses.push_back({n + 1, 0.9, 1.1, resistive ? std::abs(sh) : 0.0, resistive ? 0.0 : sh, n == 0});
    }
    auto line = [&](int f, int t, double tap) {
        const double z = impedance(rng);
        return grid::Branch{f, t, resistive ? z : 0.0, resistive ? 0.0 : z, resistive ? 0.0 : 0.1, tap, 1.0};
    };
    std::vector<grid::Branch> branches;
    for (int n = 1; n < 6; ++n) branches.push_back(line(n, n + 1, 1.0));
    branches.push_back(line(1, 4, 0.97));
    return grid::GridModel(buses, {{1, 0, 1, -1, 1, 10, 1.0}}, branches, {}, 100.0);
}

// Negating v^i conjugates V, so S(conj V; Y) = conj(S(V; conj Y)). With purely imaginary Y
// this negates p and keeps q; with purely real Y it keeps p and negates q.
TEST(BusInjections, ConjugateSymmetryOnLosslessNetwork) {
    std::mt19937_64 rng(5);
    const auto adm = build_admittances(random_radial_network(rng, false));
    ASSERT_TRUE(adm.y_bus.real().isZero(0.0));
    for (int trial = 0; trial < 100; ++trial) {
        VoltageState v(random_state(rng, 6));
        VoltageState mirrored = v;
        mirrored.v.tail(6) *= -1.0;
        const auto a = bus_injections(adm, v);
        const auto b = bus_injections(adm, mirrored);

        Eigen::VectorXcd V(6);
        for (int n = 0; n < 6; ++n) V(n) = {v.v(n), -v.v(6 + n)};
        const Eigen::VectorXcd s = V.array() * (adm.y_bus * V).conjugate().array();
        for (int n = 0; n < 6; ++n) {
            EXPECT_NEAR(b.p(n), s(n).real(), 1e-12);
            EXPECT_NEAR(b.q(n), s(n).imag(), 1e-12);
            EXPECT_NEAR(b.p(n), -a.p(n), 1e-12);
            EXPECT_NEAR(b.q(n), a.q(n), 1e-12);
        }
    }
}

TEST(BusInjections, ConjugateSymmetryOnResistiveNetwork) {
    std::mt19937_64 rng(6);
    const auto adm = build_admittances(random_radial_network(rng, true));
    ASSERT_TRUE(adm.y_bus.imag().isZero(0.0));
    for (int trial = 0; trial < 100; ++trial) {
        VoltageState v(random_state(rng, 6));
        VoltageState mirrored = v;
        mirrored.v.tail(6) *= -1.0;
        const auto a = bus_injections(adm, v);
        const auto b = bus_injections(adm, mirrored);
        EXPECT_TRUE(b.p.isApprox(a.p, 1e-12));
        EXPECT_TRUE(b.q.isApprox(-a.q, 1e-12));
    }
}

TEST(ConstraintResiduals, VoltageMagnitudeViolation) {
    std::vector<grid::Bus> buses{{1, 0.94, 1.06, 0, 0, true}, {2, 0.94, 1.06, 0, 0, false}};
    const grid::GridModel model(buses, {{1, -10, 10, -10, 10, 10, 1.0}}, {{1, 2, 0, 0.1, 0, 1, 5}},
                                {{2, 0.0, 0.0}}, 100.0);
    const auto adm = build_admittances(model);
    VoltageState v(Eigen::Vector4d(1.0, 1.10, 0.0, 0.0));
    const auto r = constraint_residuals(model, adm, v, LoadScenario::nominal(model));
    EXPECT_NEAR(r.vm_violation(1), 0.04, 1e-12);
    EXPECT_EQ(r.vm_violation(0), 0.0);
}

TEST(ConstraintResiduals, ZeroDemandFlatStartIsBalanced) {
    const auto model = testing::two_bus_model(0.0, 0.1, 0.0, 0.0, 0.0);
    const auto adm = build_admittances(model);
    const auto r = constraint_residuals(model, adm, VoltageState::flat(2), LoadScenario::zero(model));
    EXPECT_EQ(r.balance_p.size(), 1);
    EXPECT_NEAR(r.balance_p(0), 0.0, 1e-14);
    EXPECT_NEAR(r.balance_q(0), 0.0, 1e-14);
    EXPECT_EQ(r.max_violation(), 0.0);
}

TEST(ConstraintResiduals, FlowViolationUsesLargerEnd) {
    const auto model = testing::two_bus_model(0.0, 0.1, 0.0, 0.0, 0.0, 0.3);
    const auto adm = build_admittances(model);
    VoltageState v(Eigen::Vector4d(1.0, 0.95, 0.0, 0.0));
    const auto r = constraint_residuals(model, adm, v, LoadScenario::zero(model));
    EXPECT_NEAR(r.flow_violation(0), 0.2, 1e-12);
}

Setpoints case_setpoints(const grid::GridModel& model) {
    Setpoints sp{Eigen::VectorXd(model.num_generators()), Eigen::VectorXd(model.num_generators())};
    double total_load = 0.0;
    for (const auto& d : model.loads()) total_load += d.p_nominal;
    double cap = 0.0;
    for (const auto& g : model.generators()) cap += g.p_max;
    for (std::size_t g = 0; g < model.num_generators(); ++g) {
        sp.p_g(static_cast<Eigen::Index>(g)) = model.generators()[g].p_max * total_load / cap;
        sp.v_g(static_cast<Eigen::Index>(g)) = model.generators()[g].v_set;
    }
    return sp;
}

TEST(NewtonPf, FlatConsistentCaseReturnsFlatStartInOneIteration) {
    const auto model = testing::two_bus_model(0.0, 0.1, 0.0, 0.0, 0.0);
    const auto adm = build_admittances(model);
    const Setpoints sp{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
    const auto res = newton_pf(model, adm, LoadScenario::zero(model), sp);
    EXPECT_EQ(res.iterations, 1);
    EXPECT_TRUE(res.state.v.isApprox(VoltageState::flat(2).v));
}

TEST(NewtonPf, TwoBusAgainstBisectionOracle) {
    const double p = 0.5, x = 0.1;
    const auto model = testing::two_bus_model(0.0, x, 0.0, p, 0.0);
    const auto adm = build_admittances(model);
    const Setpoints sp{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
    const auto res = newton_pf(model, adm, LoadScenario::nominal(model), sp);

    // |V2|^2 = w solves w^2 - w + (xP)^2 = 0 on the high-voltage branch w in [0.5, 1].
    auto f = [&](double w) { return w * w - w + x * x * p * p; };
    double lo = 0.5, hi = 1.0;
    for (int k = 0; k < 200; ++k) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0.0 ? lo : hi) = mid;
    }
    const double v2 = std::sqrt(0.5 * (lo + hi));
    const double theta2 = -std::asin(p * x / v2);
    EXPECT_NEAR(res.state.magnitudes()(1), v2, 1e-9);
    EXPECT_NEAR(std::atan2(res.state.v(3), res.state.v(1)), theta2, 1e-9);
    EXPECT_EQ(res.state.v(2), 0.0);
}

TEST(NewtonPf, BeyondMaximumTransferThrows) {
    // Lossless line, unity power factor load: maximum transfer is V1^2 / (2x) = 5 pu.
    const auto model = testing::two_bus_model(0.0, 0.1, 0.0, 6.0, 0.0, 100.0);
    const auto adm = build_admittances(model);
    const Setpoints sp{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
    EXPECT_THROW(newton_pf(model, adm, LoadScenario::nominal(model), sp), NonConvergence);

    const auto feasible = testing::two_bus_model(0.0, 0.1, 0.0, 4.9, 0.0, 100.0);
    const auto adm2 = build_admittances(feasible);
    EXPECT_NO_THROW(newton_pf(feasible, adm2, LoadScenario::nominal(feasible), sp));
}

TEST(NewtonPf, BundledCasesConvergeAndHoldSetpoints) {
    for (const char* name : {"case9", "case14", "case57"}) {
        const auto model = load_bundled_case(name);
        const auto adm = build_admittances(model);
        const auto sp = case_setpoints(model);
        const auto scenario = LoadScenario::nominal(model);
        const auto res = newton_pf(model, adm, scenario, sp);
        EXPECT_LE(res.mismatch, 1e-8) << name;
        EXPECT_LE(power_flow_mismatch(model, adm, scenario, sp, res.state), 1e-8) << name;
        EXPECT_EQ(res.state.v(static_cast<Eigen::Index>(model.num_buses() + model.slack_index())), 0.0);
        const auto vm = res.state.magnitudes();
        for (std::size_t g = 0; g < model.num_generators(); ++g)
            EXPECT_NEAR(vm(static_cast<Eigen::Index>(model.gen_bus(g))), sp.v_g(static_cast<Eigen::Index>(g)), 1e-8);

        PowerFlowOptions again;
        again.init = res.state;
        EXPECT_LE(newton_pf(model, adm, scenario, sp, again).iterations, 2) << name;
    }
}

}  // namespace
}  // namespace opfcert::acpf
