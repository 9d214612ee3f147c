#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "opfcert/acpf/acpf.hpp"

namespace opfcert::data {

enum class Split : std::uint8_t { Train, Val, Test };

const char* split_name(Split s);
Split parse_split(std::string_view name);

struct SamplingConfig {
    std::size_t n_samples = 1100;
    std::uint64_t seed = 0;
    double correlation_target = 0.75;  ///< realized Pearson correlation between load fractions
    double load_low = 0.6;             ///< fraction of nominal
    double load_high = 1.0;
    double kumaraswamy_a = 1.6;
    double kumaraswamy_b = 2.8;
};

/// Kumaraswamy(a, b) quantile (1 - (1 - u)^(1/b))^(1/a) on [0, 1].
double kumaraswamy_quantile(double u, double a, double b);
double kumaraswamy_cdf(double x, double a, double b);

/// Pearson correlation of two Kumaraswamy-marginal variables joined by a Gaussian copula
/// with latent correlation rho, by quadrature.
double copula_pearson(double rho, double a, double b);

/// Latent copula correlation whose realized Pearson correlation equals target.
double calibrate_latent_correlation(double target, double a, double b);

/// Sizes of the train/val/test splits for n scenarios, in the ratio 8:2:1.
std::array<std::size_t, 3> split_sizes(std::size_t n);

struct ScenarioSet {
    SamplingConfig config;
    double latent_correlation = 0.0;
    std::size_t num_loads = 0;
    std::vector<double> fractions_flat;  ///< n x num_loads load fractions, row-major
    std::vector<acpf::LoadScenario> scenarios;
    std::vector<Split> splits;

    std::size_t size() const { return scenarios.size(); }
    double fraction(std::size_t k, std::size_t d) const { return fractions_flat[k * num_loads + d]; }
};

/// Correlated load scenarios: every load takes fraction low + (high - low) * Q(u) of its
/// nominal (p and q alike), where Q is the Kumaraswamy quantile and u comes from an
/// equicorrelated Gaussian copula. Scenarios are drawn from one sequential stream, so the
/// first k scenarios do not depend on n_samples. Splits are contiguous train, val, test.
ScenarioSet sample_scenarios(const grid::GridModel& model, const SamplingConfig& config);

}  // namespace opfcert::data
