#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "opfcert/common/errors.hpp"
#include "opfcert/data/dataset.hpp"
#include "opfcert/data/sampling.hpp"
#include "test_cases.hpp"

namespace opfcert::data {
namespace {

using testing::load_bundled_case;

TEST(Kumaraswamy, QuantileMedianAndEndpoints) {
    // (1 - 0.5^(1/2.8))^(1/1.6)
    const double q = kumaraswamy_quantile(0.5, 1.6, 2.8);
    EXPECT_NEAR(q, 0.3874, 5e-5);
    EXPECT_NEAR(0.6 + 0.4 * q, 0.7550, 5e-5);
    EXPECT_EQ(kumaraswamy_quantile(0.0, 1.6, 2.8), 0.0);
    EXPECT_EQ(kumaraswamy_quantile(1.0, 1.6, 2.8), 1.0);
    for (double u : {0.01, 0.2, 0.5, 0.77, 0.99}) EXPECT_NEAR(kumaraswamy_cdf(kumaraswamy_quantile(u, 1.6, 2.8), 1.6, 2.8), u, 1e-12);
}

TEST(SplitSizes, EightTwoOneRatio) {
    EXPECT_EQ(split_sizes(11000), (std::array<std::size_t, 3>{8000, 2000, 1000}));
    EXPECT_EQ(split_sizes(1100), (std::array<std::size_t, 3>{800, 200, 100}));
    EXPECT_EQ(split_sizes(1), (std::array<std::size_t, 3>{1, 0, 0}));
    for (std::size_t n = 1; n < 300; ++n) {
        const auto s = split_sizes(n);
        EXPECT_EQ(s[0] + s[1] + s[2], n);
    }
}

TEST(CopulaPearson, EndpointsAndMonotonicity) {
    EXPECT_NEAR(copula_pearson(0.0, 1.6, 2.8), 0.0, 1e-9);
    EXPECT_NEAR(copula_pearson(1.0, 1.6, 2.8), 1.0, 1e-6);
    double prev = -1.0;
    for (double rho = 0.0; rho <= 1.0; rho += 0.125) {
        const double p = copula_pearson(rho, 1.6, 2.8);
        EXPECT_GT(p, prev);
        prev = p;
    }
    const double latent = calibrate_latent_correlation(0.75, 1.6, 2.8);
    EXPECT_NEAR(copula_pearson(latent, 1.6, 2.8), 0.75, 1e-6);
}

TEST(SampleScenarios, MarginalMatchesKumaraswamyCdf) {
    const auto model = load_bundled_case("case9");
    SamplingConfig cfg;
    cfg.n_samples = 100000;
    cfg.seed = 42;
    const auto set = sample_scenarios(model, cfg);
    for (std::size_t d = 0; d < model.num_loads(); ++d) {
        std::vector<double> q(set.size());
        for (std::size_t k = 0; k < set.size(); ++k) q[k] = (set.fraction(k, d) - 0.6) / 0.4;
        std::sort(q.begin(), q.end());
        double ks = 0.0;
        const double n = static_cast<double>(q.size());
        for (std::size_t k = 0; k < q.size(); ++k) {
            const double f = kumaraswamy_cdf(q[k], 1.6, 2.8);
            ks = std::max({ks, std::abs(f - static_cast<double>(k) / n), std::abs(static_cast<double>(k + 1) / n - f)});
        }
        EXPECT_LT(ks, 0.01) << "load " << d;
    }
}

TEST(SampleScenarios, RealizedPearsonCorrelationNearTarget) {
    const auto model = load_bundled_case("case14");
    SamplingConfig cfg;
    cfg.n_samples = 10000;
    cfg.seed = 7;
    const auto set = sample_scenarios(model, cfg);
    const std::size_t nd = model.num_loads();
    Eigen::MatrixXd f(static_cast<Eigen::Index>(set.size()), static_cast<Eigen::Index>(nd));
    for (std::size_t k = 0; k < set.size(); ++k)
        for (std::size_t d = 0; d < nd; ++d) f(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d)) = set.fraction(k, d);
    const Eigen::MatrixXd c = f.rowwise() - f.colwise().mean();
    const Eigen::MatrixXd cov = c.transpose() * c;
    double total = 0.0;
    int pairs = 0;
    for (Eigen::Index i = 0; i < cov.rows(); ++i)
        for (Eigen::Index j = i + 1; j < cov.cols(); ++j) {
            total += cov(i, j) / std::sqrt(cov(i, i) * cov(j, j));
            ++pairs;
        }
    const double mean = total / pairs;
    EXPECT_GE(mean, 0.70);
    EXPECT_LE(mean, 0.80);
}

TEST(SampleScenarios, DeterministicBoxedAndPrefixStable) {
    const auto model = load_bundled_case("case14");
    SamplingConfig cfg;
    cfg.n_samples = 200;
    cfg.seed = 3;
    const auto a = sample_scenarios(model, cfg);
    const auto b = sample_scenarios(model, cfg);
    EXPECT_EQ(a.fractions_flat, b.fractions_flat);
    cfg.n_samples = 120;
    const auto prefix = sample_scenarios(model, cfg);
    EXPECT_TRUE(std::equal(prefix.fractions_flat.begin(), prefix.fractions_flat.end(), a.fractions_flat.begin()));
    cfg.seed = 4;
    EXPECT_NE(sample_scenarios(model, cfg).fractions_flat, prefix.fractions_flat);

    const auto nominal = acpf::LoadScenario::nominal(model);
    for (const auto& s : a.scenarios)
        for (Eigen::Index d = 0; d < s.p_d.size(); ++d) {
            EXPECT_GE(std::abs(s.p_d(d)), 0.6 * std::abs(nominal.p_d(d)) - 1e-15);
            EXPECT_LE(std::abs(s.p_d(d)), 1.0 * std::abs(nominal.p_d(d)) + 1e-15);
            // constant power factor
            EXPECT_NEAR(s.q_d(d) * nominal.p_d(d), s.p_d(d) * nominal.q_d(d), 1e-15);
        }
    EXPECT_EQ(std::count(a.splits.begin(), a.splits.end(), Split::Train), 145);
    EXPECT_EQ(std::count(a.splits.begin(), a.splits.end(), Split::Val), 36);
    EXPECT_EQ(std::count(a.splits.begin(), a.splits.end(), Split::Test), 19);
    EXPECT_TRUE(std::is_sorted(a.splits.begin(), a.splits.end()));
}

TEST(SampleScenarios, RejectsEmptyRequest) {
    const auto model = load_bundled_case("case9");
    SamplingConfig cfg;
    cfg.n_samples = 0;
    EXPECT_THROW(sample_scenarios(model, cfg), ValidationError);
}

TEST(GenerateLabels, LabelsAreFeasibleWithSlackReference) {
    const auto model = load_bundled_case("case9");
    const auto adm = grid::build_admittances(model);
    SamplingConfig cfg;
    cfg.n_samples = 22;
    const auto data = generate_labels(model, adm, sample_scenarios(model, cfg));
    ASSERT_EQ(data.size(), 22u);
    EXPECT_EQ(data.indices(Split::Train).size(), 16u);
    EXPECT_EQ(data.indices(Split::Val).size(), 4u);
    EXPECT_EQ(data.indices(Split::Test).size(), 2u);
    const auto slack = static_cast<Eigen::Index>(model.num_buses() + model.slack_index());
    for (const auto& s : data.samples) {
        EXPECT_LE(acpf::constraint_residuals(model, adm, s.v, s.load).max_violation(), 1e-6);
        EXPECT_LE(std::abs(s.v.v(slack)), 1e-8);
        const auto vm = s.v.magnitudes();
        for (std::size_t g = 0; g < model.num_generators(); ++g)
            EXPECT_DOUBLE_EQ(s.v_g(static_cast<Eigen::Index>(g)), vm(static_cast<Eigen::Index>(model.gen_bus(g))));
    }
    EXPECT_EQ(data.inputs(Split::Train).rows(), 16);
    EXPECT_EQ(data.inputs(Split::Train).cols(), 6);
    EXPECT_EQ(data.power_targets(Split::Val).cols(), 6);
    EXPECT_EQ(data.voltage_targets(Split::Test).cols(), 18);
}

TEST(GenerateLabels, ZeroVarianceScenariosGiveIdenticalLabels) {
    const auto model = load_bundled_case("case9");
    const auto adm = grid::build_admittances(model);
    SamplingConfig cfg;
    cfg.n_samples = 4;
    cfg.load_low = cfg.load_high = 1.0;
    const auto data = generate_labels(model, adm, sample_scenarios(model, cfg));
    for (const auto& s : data.samples) {
        EXPECT_EQ(s.v.v, data.samples[0].v.v);
        EXPECT_EQ(s.objective, data.samples[0].objective);
    }
}

TEST(GenerateLabels, UnsolvableScenariosAreReplacedFromTheStream) {
    // Current limit 0.8 on a unity-power-factor 1.0 pu load: with |v| <= 1.1 at most about
    // 0.87 pu can be delivered, so the upper tail of the sampled fractions is unservable.
    const auto model = testing::two_bus_model(0.01, 0.1, 0.0, 1.0, 0.0, 0.8);
    const auto adm = grid::build_admittances(model);
    SamplingConfig cfg;
    cfg.n_samples = 200;
    cfg.seed = 1;
    LabelingOptions opts;
    opts.max_failure_fraction = 0.5;
    LabelingStats stats;
    const auto data = generate_labels(model, adm, sample_scenarios(model, cfg), opts, &stats);
    EXPECT_EQ(data.size(), 200u);
    EXPECT_GT(stats.failed, 0u);
    EXPECT_EQ(stats.attempted - stats.failed, 200u);
    for (const auto& s : data.samples)
        EXPECT_LE(acpf::constraint_residuals(model, adm, s.v, s.load).max_violation(), 1e-6);

    opts.max_failure_fraction = 0.0;
    EXPECT_THROW(generate_labels(model, adm, sample_scenarios(model, cfg), opts), LabelingFailed);
}

LabeledDataset small_dataset() {
    const auto model = load_bundled_case("case9");
    const auto adm = grid::build_admittances(model);
    SamplingConfig cfg;
    cfg.n_samples = 10;
    auto data = generate_labels(model, adm, sample_scenarios(model, cfg));
    data.metadata.emplace_back("config_hash", "0123456789abcdef");
    return data;
}

TEST(DatasetCsv, EmptyRoundTrip) {
    const auto empty = empty_dataset(load_bundled_case("case9"));
    std::stringstream a;
    write_dataset(a, empty);
    const auto back = read_dataset(a);
    EXPECT_EQ(back, empty);
}

TEST(DatasetCsv, TenSampleRoundTripIsStable) {
    const auto data = small_dataset();
    std::stringstream first;
    write_dataset(first, data);
    const auto text = first.str();
    EXPECT_EQ(text.rfind("# format=opfcert-dataset\n", 0), 0u);
    EXPECT_NE(text.find("pd_5,pd_7,pd_9,qd_5,qd_7,qd_9,pg_1,pg_2,pg_3,vg_1,"), std::string::npos);
    const auto back = read_dataset(first);
    std::stringstream second;
    write_dataset(second, back);
    EXPECT_EQ(second.str(), text);
    const auto again = read_dataset(second);
    EXPECT_EQ(again, back);

    ASSERT_EQ(back.size(), data.size());
    EXPECT_EQ(back.metadata, data.metadata);
    for (std::size_t k = 0; k < data.size(); ++k) {
        EXPECT_LE((back.samples[k].v.v - data.samples[k].v.v).lpNorm<Eigen::Infinity>(), 1e-11);
        EXPECT_NEAR(back.samples[k].objective, data.samples[k].objective, 1e-11 * std::abs(data.samples[k].objective));
        EXPECT_EQ(back.samples[k].split, data.samples[k].split);
    }
}

TEST(DatasetCsv, CorruptedHeaderOrRowIsFormatError) {
    const auto data = small_dataset();
    std::stringstream ss;
    write_dataset(ss, data);
    const std::string text = ss.str();

    auto read_text = [](const std::string& t) {
        std::istringstream in(t);
        return read_dataset(in);
    };
    std::string bad = text;
    bad.replace(bad.find("qd_5"), 4, "qx_5");
    EXPECT_THROW(read_text(bad), FormatError);
    bad = text;
    bad.replace(bad.find(",split"), 6, ",splot");
    EXPECT_THROW(read_text(bad), FormatError);
    bad = text;
    bad.replace(bad.find(",train"), 6, ",trian");
    EXPECT_THROW(read_text(bad), FormatError);
    bad = text;
    bad.replace(bad.find(",train"), 0, ",1");
    EXPECT_THROW(read_text(bad), FormatError);
    EXPECT_THROW(read_text("# only=metadata\n"), FormatError);
}

TEST(DatasetCsv, CompatibilityWithNetwork) {
    const auto data = empty_dataset(load_bundled_case("case9"));
    EXPECT_NO_THROW(check_compatible(data, load_bundled_case("case9")));
    EXPECT_THROW(check_compatible(data, load_bundled_case("case14")), ValidationError);
}

}  // namespace
}  // namespace opfcert::data
