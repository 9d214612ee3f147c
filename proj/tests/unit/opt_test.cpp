#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "opfcert/common/errors.hpp"
#include "opfcert/data/sampling.hpp"
#include "opfcert/opt/opf.hpp"
#include "test_cases.hpp"

namespace opfcert::opt {
namespace {

using acpf::LoadScenario;
using grid::build_admittances;
using testing::load_bundled_case;

void expect_feasible(const grid::GridModel& model, const grid::AdmittanceSet& adm, const LoadScenario& s,
                     const OPFSolution& sol, const std::string& what) {
    const auto r = acpf::constraint_residuals(model, adm, sol.v, s);
    EXPECT_LE(r.max_violation(), 1e-6) << what;
    EXPECT_LE(sol.kkt_residual, 1e-5) << what;
    EXPECT_TRUE(sol.converged);
    double cost = 0.0;
    for (std::size_t g = 0; g < model.num_generators(); ++g)
        cost += model.generators()[g].cost * sol.p_g(static_cast<Eigen::Index>(g));
    EXPECT_EQ(sol.objective, cost) << what;
    const auto dispatch = acpf::generator_dispatch(model, adm, sol.v, s);
    EXPECT_LE((dispatch.p_g - sol.p_g).lpNorm<Eigen::Infinity>(), 1e-7) << what;
    EXPECT_LE((dispatch.q_g - sol.q_g).lpNorm<Eigen::Infinity>(), 1e-7) << what;
}

LoadScenario scaled(const grid::GridModel& model, double factor) {
    auto s = LoadScenario::nominal(model);
    s.p_d *= factor;
    s.q_d *= factor;
    return s;
}

grid::GridModel with_generator_pmax(const grid::GridModel& m, std::size_t g, double p_max) {
    auto gens = m.generators();
    gens[g].p_max = p_max;
    return grid::GridModel(m.buses(), gens, m.branches(), m.loads(), m.base_mva());
}

// Cost of the power flow defined by generator setpoints, or +inf when any limit is violated.
double setpoint_cost(const grid::GridModel& model, const grid::AdmittanceSet& adm, const LoadScenario& s,
                     const acpf::Setpoints& sp) {
    try {
        const auto pf = acpf::newton_pf(model, adm, s, sp);
        if (acpf::constraint_residuals(model, adm, pf.state, s).max_violation() > 1e-6)
            return std::numeric_limits<double>::infinity();
        const auto d = acpf::generator_dispatch(model, adm, pf.state, s);
        double cost = 0.0;
        for (std::size_t g = 0; g < model.num_generators(); ++g)
            cost += model.generators()[g].cost * d.p_g(static_cast<Eigen::Index>(g));
        return cost;
    } catch (const NonConvergence&) {
        return std::numeric_limits<double>::infinity();
    }
}

TEST(SolveOpf, TwoBusDispatchMatchesSlackVoltageBruteForce) {
    const auto model = testing::two_bus_model(0.01, 0.1, 0.0, 0.5, 0.2);
    const auto adm = build_admittances(model);
    const auto s = LoadScenario::nominal(model);
    const auto sol = solve_opf(model, adm, s);
    expect_feasible(model, adm, s, sol, "two-bus");

    double best = std::numeric_limits<double>::infinity();
    double best_v = 0.0;
    for (int k = 0; k <= 2000; ++k) {
        const double v1 = 0.9 + 0.2 * k / 2000.0;
        const double c = setpoint_cost(model, adm, s, {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, v1)});
        if (c < best) {
            best = c;
            best_v = v1;
        }
    }
    EXPECT_NEAR(best_v, 1.1, 1e-12);
    EXPECT_NEAR(sol.objective, best, 1e-6 * best);
    // dispatch = load + losses, losses = r |i|^2
    const auto il = acpf::branch_currents(adm, sol.v);
    const double loss = 0.01 * (il(0) * il(0) + il(1) * il(1));
    EXPECT_NEAR(sol.p_g(0), 0.5 + loss, 1e-8);
    EXPECT_NEAR(sol.v.magnitudes()(0), 1.1, 1e-8);
}

TEST(SolveOpf, BundledCasesConvergeToFeasibleKktPoints) {
    for (const char* name : {"case9", "case14", "case57"}) {
        const auto model = load_bundled_case(name);
        const auto adm = build_admittances(model);
        for (double factor : {0.6, 0.8, 1.0}) {
            const auto s = scaled(model, factor);
            const auto sol = solve_opf(model, adm, s);
            expect_feasible(model, adm, s, sol, std::string(name) + " x" + std::to_string(factor));
            EXPECT_LE(std::abs(sol.v.v(static_cast<Eigen::Index>(model.num_buses() + model.slack_index()))), 1e-8);
        }
    }
}

TEST(SolveOpf, WarmStartFromOwnSolutionIsAFixedPoint) {
    for (const char* name : {"case9", "case14", "case57"}) {
        const auto model = load_bundled_case(name);
        const auto adm = build_admittances(model);
        const auto s = LoadScenario::nominal(model);
        const auto cold = solve_opf(model, adm, s);
        const auto warm = solve_opf(model, adm, s, cold.point());
        EXPECT_LE(warm.outer_iterations, 2) << name;
        EXPECT_NEAR(warm.objective, cold.objective, 1e-8) << name;
        EXPECT_LE(warm.iterations, cold.iterations) << name;
    }
}

TEST(SolveOpf, WarmStartAtSampledLoadsReturnsTheSolution) {
    // Seed 17 includes a load where the cold solve stops just inside the KKT tolerance.
    const auto model = load_bundled_case("case9");
    const auto adm = build_admittances(model);
    data::SamplingConfig cfg;
    cfg.n_samples = 20;
    cfg.seed = 17;
    for (const auto& s : data::sample_scenarios(model, cfg).scenarios) {
        const auto cold = solve_opf(model, adm, s);
        const auto warm = solve_opf(model, adm, s, cold.point());
        EXPECT_EQ(warm.outer_iterations, 0);
        EXPECT_EQ(warm.iterations, 0);
        EXPECT_EQ(warm.objective, cold.objective);
        EXPECT_LE(warm.kkt_residual, 1e-5);
    }
}

TEST(SolveOpf, Case9MatchesSetpointGridSearch) {
    const auto model = load_bundled_case("case9");
    const auto adm = build_admittances(model);
    const auto s = LoadScenario::nominal(model);
    const auto sol = solve_opf(model, adm, s);
    ASSERT_EQ(model.num_generators(), 3u);
    ASSERT_EQ(model.gen_bus(0), model.slack_index());

    // Coarse grid over (p_g2, p_g3, V1, V2, V3), then a shrinking pattern search.
    std::array<double, 5> best_x{};
    double best = std::numeric_limits<double>::infinity();
    auto cost_at = [&](const std::array<double, 5>& x) {
        acpf::Setpoints sp{Eigen::Vector3d(0.0, x[0], x[1]), Eigen::Vector3d(x[2], x[3], x[4])};
        return setpoint_cost(model, adm, s, sp);
    };
    const auto& g = model.generators();
    for (double p2 = g[1].p_min; p2 <= g[1].p_max; p2 += 0.1)
        for (double p3 = g[2].p_min; p3 <= g[2].p_max; p3 += 0.1)
            for (double v1 : {1.0, 1.05, 1.1})
                for (double v2 : {1.0, 1.05, 1.1})
                    for (double v3 : {1.0, 1.05, 1.1}) {
                        const std::array<double, 5> x{p2, p3, v1, v2, v3};
                        const double c = cost_at(x);
                        if (c < best) {
                            best = c;
                            best_x = x;
                        }
                    }
    ASSERT_TRUE(std::isfinite(best));
    std::array<double, 5> step{0.05, 0.05, 0.025, 0.025, 0.025};
    for (int round = 0; round < 14; ++round) {
        bool improved = true;
        while (improved) {
            improved = false;
            for (std::size_t k = 0; k < 5; ++k)
                for (double dir : {1.0, -1.0}) {
                    auto x = best_x;
                    x[k] += dir * step[k];
                    const double c = cost_at(x);
                    if (c < best - 1e-12) {
                        best = c;
                        best_x = x;
                        improved = true;
                    }
                }
        }
        for (auto& h : step) h *= 0.5;
    }
    EXPECT_NEAR(sol.objective, best, 0.005 * best);
    EXPECT_LE(sol.objective, best + 1e-6 * best);
}

TEST(SolveOpf, ObjectiveIsMonotoneInEachLoad) {
    const auto model = load_bundled_case("case9");
    const auto adm = build_admittances(model);
    for (Eigen::Index d = 0; d < static_cast<Eigen::Index>(model.num_loads()); ++d) {
        double previous = -std::numeric_limits<double>::infinity();
        for (double factor : {0.8, 0.9, 1.0}) {
            auto s = scaled(model, 0.8);
            s.p_d(d) = model.loads()[static_cast<std::size_t>(d)].p_nominal * factor;
            const double obj = solve_opf(model, adm, s).objective;
            EXPECT_GE(obj, previous - 1e-9) << "load " << d;
            previous = obj;
        }
    }
}

TEST(SolveOpf, RejectsMisdimensionedInit) {
    const auto model = load_bundled_case("case9");
    const auto adm = build_admittances(model);
    OpfPoint bad = cold_start_point(model);
    bad.p_g.resize(2);
    EXPECT_THROW(solve_opf(model, adm, LoadScenario::nominal(model), bad), ValidationError);
}

TEST(SolveOpf, InfeasibleDemandThrowsNoConvergence) {
    const auto model = testing::two_bus_model(0.0, 0.1, 0.0, 20.0, 0.0, 100.0);
    const auto adm = build_admittances(model);
    EXPECT_THROW(solve_opf(model, adm, LoadScenario::nominal(model)), NoConvergence);
}

TEST(RestoreFeasible, FeasiblePredictionIsUnchanged) {
    const auto model = load_bundled_case("case9");
    const auto adm = build_admittances(model);
    const auto s = LoadScenario::nominal(model);
    const auto sol = solve_opf(model, adm, s);
    const auto r = restore_feasible(model, adm, s, sol.point());
    EXPECT_LE((r.solution.point().to_vector() - sol.point().to_vector()).lpNorm<Eigen::Infinity>(), 1e-6);
    EXPECT_LE(r.distance(), 1e-12);
}

TEST(RestoreFeasible, GeneratorAboveLimitIsPulledBackToLimit) {
    const auto base_model = load_bundled_case("case9");
    const auto base_adm = build_admittances(base_model);
    const auto s = LoadScenario::nominal(base_model);
    const auto sol = solve_opf(base_model, base_adm, s);
    // Tighten generator 1 to its optimal output so the limit binds at the known feasible point.
    const double pmax = sol.p_g(1);
    ASSERT_LT(pmax, base_model.generators()[1].p_max - 0.05);
    const auto model = with_generator_pmax(base_model, 1, pmax);
    const auto adm = build_admittances(model);

    OpfPoint prediction = sol.point();
    prediction.p_g(1) = pmax + 0.1;
    const auto r = restore_feasible(model, adm, s, prediction);

    // Any feasible point has p_g1 <= pmax, so its squared distance is at least 0.1^2; the
    // original solution attains it. 1-D check over the violated coordinate alone:
    double oracle = std::numeric_limits<double>::infinity();
    for (int k = -200; k <= 1000; ++k) {
        const double t = pmax - 0.0005 * k;
        if (t <= pmax) oracle = std::min(oracle, (prediction.p_g(1) - t) * (prediction.p_g(1) - t));
    }
    EXPECT_NEAR(oracle, 0.01, 1e-12);
    EXPECT_NEAR(r.distance(), oracle, 1e-6);
    EXPECT_NEAR(r.solution.p_g(1), pmax, 1e-6);
    EXPECT_LE(acpf::constraint_residuals(model, adm, r.solution.v, s).max_violation(), 1e-6);
}

TEST(RestoreFeasible, RandomPredictionsBecomeFeasibleAndRestorationIsIdempotent) {
    const auto model = load_bundled_case("case9");
    const auto adm = build_admittances(model);
    const auto s = LoadScenario::nominal(model);
    const auto sol = solve_opf(model, adm, s);
    std::mt19937_64 rng(17);
    std::normal_distribution<double> noise(0.0, 0.05);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd x = sol.point().to_vector();
        for (auto& c : x) c += noise(rng);
        const auto prediction = OpfPoint::from_vector(x, model.num_buses(), model.num_generators());
        const auto r = restore_feasible(model, adm, s, prediction);
        EXPECT_LE(acpf::constraint_residuals(model, adm, r.solution.v, s).max_violation(), 1e-6);
        EXPECT_NEAR(r.distance(), (r.solution.point().to_vector() - x).squaredNorm(), 1e-12);

        const auto again = restore_feasible(model, adm, s, r.solution.point());
        EXPECT_LT((again.solution.point().to_vector() - r.solution.point().to_vector()).lpNorm<Eigen::Infinity>(),
                  1e-6);
    }
}

std::vector<LoadScenario> jittered(const grid::GridModel& model, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.7, 1.0);
    std::vector<LoadScenario> out;
    for (std::size_t k = 0; k < n; ++k) {
        auto s = LoadScenario::nominal(model);
        for (Eigen::Index d = 0; d < s.p_d.size(); ++d) {
            const double f = u(rng);
            s.p_d(d) *= f;
            s.q_d(d) *= f;
        }
        out.push_back(s);
    }
    return out;
}

TEST(WarmStartReport, ExactLabelsNeverSlowTheSolver) {
    const auto model = load_bundled_case("case9");
    const auto adm = build_admittances(model);
    const auto scenarios = jittered(model, 20, 3);
    const auto report = warm_start_report(model, adm, scenarios, [&](const LoadScenario& s) {
        return solve_opf(model, adm, s).point();
    });
    ASSERT_EQ(report.rows.size(), 20u);
    std::size_t faster = 0;
    for (const auto& row : report.rows) {
        ASSERT_TRUE(row.ok) << row.error;
        if (row.warm_iterations <= row.cold_iterations) ++faster;
        EXPECT_NEAR(row.warm_objective, row.cold_objective, 1e-6 * std::abs(row.cold_objective));
    }
    EXPECT_GE(faster, 19u);
    EXPECT_EQ(report.summary.trimmed, 0u);
    EXPECT_EQ(report.summary.aggregated, 20u);
    EXPECT_DOUBLE_EQ(report.summary.matching_fraction, 1.0);
    EXPECT_LT(report.summary.mean_warm_iterations, report.summary.mean_cold_iterations);
}

TEST(WarmStartReport, ColdStartPredictorReproducesColdSolution) {
    const auto model = load_bundled_case("case9");
    const auto adm = build_admittances(model);
    const auto scenarios = jittered(model, 10, 4);
    const auto report = warm_start_report(model, adm, scenarios,
                                          [&](const LoadScenario&) { return cold_start_point(model); });
    for (const auto& row : report.rows) {
        ASSERT_TRUE(row.ok) << row.error;
        EXPECT_NEAR(row.warm_objective, row.cold_objective, 1e-3 * std::abs(row.cold_objective));
    }
    EXPECT_NEAR(report.summary.mean_warm_iterations, report.summary.mean_cold_iterations,
                0.5 * report.summary.mean_cold_iterations);
}

TEST(WarmStartReport, TrimsOutliersFromLargeRuns) {
    const auto model = testing::two_bus_model(0.01, 0.1, 0.0, 0.5, 0.2);
    const auto adm = build_admittances(model);
    auto scenarios = jittered(model, 110, 5);
    scenarios[3].p_d(0) = 50.0;  // infeasible, reported as a failed row
    const auto report = warm_start_report(model, adm, scenarios,
                                          [&](const LoadScenario&) { return cold_start_point(model); }, {}, 2);
    EXPECT_EQ(report.summary.failed, 1u);
    EXPECT_FALSE(report.rows[3].ok);
    EXPECT_FALSE(report.rows[3].error.empty());
    EXPECT_EQ(report.summary.trimmed, 20u);
    EXPECT_EQ(report.summary.aggregated, 89u);

    std::ostringstream csv;
    write_csv(csv, report);
    std::size_t lines = 0;
    std::string line;
    std::istringstream in(csv.str());
    while (std::getline(in, line)) ++lines;
    EXPECT_EQ(lines, 111u);
    EXPECT_NE(csv.str().find("3,failed"), std::string::npos);
    const auto doc = to_json(report.summary);
    EXPECT_EQ(doc.at("aggregated").get<int>(), 89);
}

}  // namespace
}  // namespace opfcert::opt
