#include <complex>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "opfcert/common/errors.hpp"
#include "opfcert/grid/admittance.hpp"
#include "opfcert/grid/grid_model.hpp"
#include "test_cases.hpp"

namespace opfcert::grid {
namespace {

using testing::load_bundled_case;
using testing::two_bus_case_text;

TEST(ParseCase, MinimalTwoBusCase) {
    const auto model = parse_case(two_bus_case_text(0.1, 50.0, 10.0, 200.0));
    EXPECT_EQ(model.num_buses(), 2u);
    EXPECT_EQ(model.num_branches(), 1u);
    EXPECT_EQ(model.num_generators(), 1u);
    ASSERT_EQ(model.num_loads(), 1u);
    EXPECT_DOUBLE_EQ(model.loads()[0].p_nominal, 0.5);
    EXPECT_DOUBLE_EQ(model.loads()[0].q_nominal, 0.1);
    EXPECT_DOUBLE_EQ(model.branches()[0].flow_limit, 2.0);
    EXPECT_DOUBLE_EQ(model.generators()[0].cost, 1000.0);  // 10 $/MWh on a 100 MVA base
    EXPECT_EQ(model.slack_index(), 0u);
    EXPECT_EQ(model.non_generator_buses(), std::vector<std::size_t>{1});
}

TEST(ParseCase, MergesGeneratorsSharingABus) {
    const std::string text = R"(
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 345 1 1.1 0.9;
  2 1 80 20 0 0 1 1 0 345 1 1.1 0.9;
];
mpc.gen = [
  1 60 0 50 -50 1.02 100 1 100 10;
  1 20 0 30 -10 1.02 100 1 150 0;
];
mpc.branch = [
  1 2 0.01 0.1 0.02 120 0 0 0 0 1 -360 360;
];
mpc.gencost = [
  2 0 0 3 0 20 0;
  2 0 0 2 40 0;
];
)";
    const auto model = parse_case(text);
    ASSERT_EQ(model.num_generators(), 1u);
    const auto& g = model.generators()[0];
    EXPECT_DOUBLE_EQ(g.p_max, 2.5);
    EXPECT_DOUBLE_EQ(g.p_min, 0.1);
    EXPECT_DOUBLE_EQ(g.q_max, 0.8);
    EXPECT_DOUBLE_EQ(g.q_min, -0.6);
    // dispatch-weighted: (20*60 + 40*20) / 80 $/MWh
    EXPECT_NEAR(g.cost, 100.0 * (20.0 * 60.0 + 40.0 * 20.0) / 80.0, 1e-9);
    EXPECT_DOUBLE_EQ(g.v_set, 1.02);
}

TEST(ParseCase, BranchToMissingBusIsValidationError) {
    std::string text = two_bus_case_text();
    const auto pos = text.find("  1 2 0 ");
    ASSERT_NE(pos, std::string::npos);
    text.replace(pos, 8, "  1 99 0 ");
    EXPECT_THROW(parse_case(text), ValidationError);
}

TEST(ParseCase, ZeroSlackBusesIsValidationError) {
    std::string text = two_bus_case_text();
    text.replace(text.find("  1 3 "), 6, "  1 2 ");
    EXPECT_THROW(parse_case(text), ValidationError);
}

TEST(ParseCase, MalformedNumberReportsLine) {
    std::string text = two_bus_case_text();
    text.replace(text.find("345 1 1.1"), 3, "3x5");
    try {
        parse_case(text);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 5u);
    }
}

TEST(ParseCase, RejectsQuadraticCost) {
    std::string text = two_bus_case_text();
    text.replace(text.find("2 0 0 2 10 0"), 12, "2 0 0 3 0.1 10 0");
    EXPECT_THROW(parse_case(text), ParseError);
    std::string zero_quadratic = two_bus_case_text();
    zero_quadratic.replace(zero_quadratic.find("2 0 0 2 10 0"), 12, "2 0 0 3 0 10 0");
    EXPECT_NO_THROW(parse_case(zero_quadratic));
}

TEST(ParseCase, RejectsUnterminatedSection) {
    std::string text = two_bus_case_text();
    text.resize(text.rfind("];"));
    EXPECT_THROW(parse_case(text), ParseError);
}

TEST(ParseCase, MissingFlowLimitsUseTenTimesLargestLimit) {
    const auto model = load_bundled_case("case9");
    double largest = 0.0;
    for (const auto& br : model.branches()) largest = std::max(largest, br.flow_limit);
    EXPECT_DOUBLE_EQ(largest, 3.0);

    std::string text = two_bus_case_text(0.1, 0.0, 0.0, 0.0);
    const std::string second = "  2 1 0 0.2 0 0 0 0 0 0 1 -360 360;\n";
    text.insert(text.find("  1 2 0 0.1"), "  1 2 0 0.3 0 75 0 0 0 0 1 -360 360;\n" + second);
    const auto m = parse_case(text);
    ASSERT_EQ(m.num_branches(), 3u);
    EXPECT_DOUBLE_EQ(m.branches()[0].flow_limit, 0.75);
    EXPECT_DOUBLE_EQ(m.branches()[1].flow_limit, 7.5);
    EXPECT_DOUBLE_EQ(m.branches()[2].flow_limit, 7.5);
}

TEST(ParseCase, BundledCasesHaveExpectedDimensions) {
    struct Expect {
        const char* name;
        std::size_t nb, ng, nl, nd;
    };
    for (const auto& e : {Expect{"case9", 9, 3, 9, 3}, Expect{"case14", 14, 5, 20, 11},
                          Expect{"case57", 57, 7, 80, 42}}) {
        const auto m = load_bundled_case(e.name);
        EXPECT_EQ(m.num_buses(), e.nb) << e.name;
        EXPECT_EQ(m.num_generators(), e.ng) << e.name;
        EXPECT_EQ(m.num_branches(), e.nl) << e.name;
        EXPECT_EQ(m.num_loads(), e.nd) << e.name;
    }
}

TEST(GridJson, RoundTripIsIdentical) {
    for (const char* name : {"case9", "case14", "case57"}) {
        const auto model = load_bundled_case(name);
        const auto doc = to_json(model);
        const auto again = grid_from_json(nlohmann::json::parse(doc.dump()));
        EXPECT_EQ(model, again) << name;
        EXPECT_EQ(doc.dump(), to_json(again).dump());
    }
}

TEST(GridJson, RejectsForeignDocument) {
    EXPECT_THROW(grid_from_json(nlohmann::json{{"format", "other"}}), FormatError);
}

TEST(Admittance, SingleLineHandComputation) {
    const auto adm = build_admittances(parse_case(two_bus_case_text(0.1)));
    EXPECT_TRUE(adm.y_bus.real().isZero(1e-12));
    Eigen::Matrix2d expected;
    expected << -10, 10, 10, -10;
    EXPECT_TRUE(adm.y_bus.imag().isApprox(expected, 1e-12));
}

TEST(Admittance, NoBranchesLeavesShuntDiagonal) {
    std::vector<Bus> buses{{1, 0.9, 1.1, 0.02, 0.3, true}, {2, 0.9, 1.1, 0.0, -0.1, false}};
    std::vector<Generator> gens{{1, 0, 1, -1, 1, 10, 1.0}};
    const GridModel model(buses, gens, {}, {}, 100.0);
    const auto adm = build_admittances(model);
    Eigen::MatrixXcd expected = Eigen::MatrixXcd::Zero(2, 2);
    expected(0, 0) = {0.02, 0.3};
    expected(1, 1) = {0.0, -0.1};
    EXPECT_TRUE(adm.y_bus.isApprox(expected));
    EXPECT_EQ(adm.y_l_rect.rows(), 0);
}

TEST(Admittance, ZeroImpedanceBranchThrows) {
    const auto model = testing::two_bus_model(0.0, 0.0, 0.0, 0.1, 0.0);
    EXPECT_THROW(build_admittances(model), SingularBranch);
}

TEST(Admittance, StackedBranchMatrixShape) {
    const auto adm = build_admittances(load_bundled_case("case9"));
    EXPECT_EQ(adm.y_l_rect.rows(), 36);
    EXPECT_EQ(adm.y_l_rect.cols(), 18);
    EXPECT_TRUE(adm.y_l_rect.topRows(18).isApprox(adm.y_f_rect));
    EXPECT_TRUE(adm.y_l_rect.bottomRows(18).isApprox(adm.y_t_rect));
}

TEST(Admittance, BlockStructureHolds) {
    for (const char* name : {"case9", "case14", "case57"}) {
        const auto adm = build_admittances(load_bundled_case(name));
        const auto nb = static_cast<Eigen::Index>(adm.num_buses());
        const auto& y = adm.y_bus_rect;
        EXPECT_EQ(y.topLeftCorner(nb, nb), y.bottomRightCorner(nb, nb)) << name;
        EXPECT_EQ(y.topRightCorner(nb, nb), -y.bottomLeftCorner(nb, nb)) << name;
        const auto nl = static_cast<Eigen::Index>(adm.num_branches());
        EXPECT_EQ(adm.y_f_rect.topLeftCorner(nl, nb), adm.y_f_rect.bottomRightCorner(nl, nb)) << name;
        EXPECT_EQ(adm.y_t_rect.topRightCorner(nl, nb), -adm.y_t_rect.bottomLeftCorner(nl, nb)) << name;
    }
}

TEST(Admittance, KirchhoffConsistencyOnRandomStates) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.2, 1.2);
    for (const char* name : {"case9", "case14", "case57"}) {
        const auto adm = build_admittances(load_bundled_case(name));
        const auto nb = static_cast<Eigen::Index>(adm.num_buses());
        const auto nl = static_cast<Eigen::Index>(adm.num_branches());
        for (int trial = 0; trial < 20; ++trial) {
            Eigen::VectorXd v(2 * nb);
            for (auto& x : v) x = u(rng);
            const Eigen::VectorXd bus = adm.y_bus_rect * v;
            const Eigen::VectorXd il = adm.y_l_rect * v;
            Eigen::VectorXd sum = Eigen::VectorXd::Zero(2 * nb);
            for (Eigen::Index l = 0; l < nl; ++l) {
                const auto f = static_cast<Eigen::Index>(adm.branch_from[static_cast<std::size_t>(l)]);
                const auto t = static_cast<Eigen::Index>(adm.branch_to[static_cast<std::size_t>(l)]);
                sum(f) += il(l);
                sum(nb + f) += il(nl + l);
                sum(t) += il(2 * nl + l);
                sum(nb + t) += il(3 * nl + l);
            }
            for (Eigen::Index n = 0; n < nb; ++n) {
                const std::complex<double> vn(v(n), v(nb + n));
                const std::complex<double> ish = adm.y_shunt(n) * vn;
                sum(n) += ish.real();
                sum(nb + n) += ish.imag();
            }
            EXPECT_LE((bus - sum).cwiseAbs().maxCoeff(), 1e-10) << name;
        }
    }
}

TEST(Admittance, FlatStartOnUnloadedLosslessNetworkDrawsNoCurrent) {
    std::vector<Bus> buses{{1, 0.9, 1.1, 0, 0, true}, {2, 0.9, 1.1, 0, 0, false}, {3, 0.9, 1.1, 0, 0, false}};
    std::vector<Generator> gens{{1, 0, 1, -1, 1, 10, 1.0}};
    std::vector<Branch> branches{{1, 2, 0, 0.1, 0, 1, 1}, {2, 3, 0, 0.2, 0, 1, 1}, {3, 1, 0, 0.05, 0, 1, 1}};
    const GridModel model(buses, gens, branches, {}, 100.0);
    const auto adm = build_admittances(model);
    Eigen::VectorXd flat = Eigen::VectorXd::Zero(6);
    flat.head(3).setOnes();
    EXPECT_LE((adm.y_bus_rect * flat).cwiseAbs().maxCoeff(), 1e-12);
}

}  // namespace
}  // namespace opfcert::grid
