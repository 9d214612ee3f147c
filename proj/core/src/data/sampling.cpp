#include "opfcert/data/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>
#include <numbers>
#include <random>

#include "opfcert/common/errors.hpp"
#include "opfcert/common/random.hpp"

namespace opfcert::data {

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw FormatError("unknown split '" + std::string(name) + "'");
}

double kumaraswamy_quantile(double u, double a, double b) {
    u = std::clamp(u, 0.0, 1.0);
    return std::pow(1.0 - std::pow(1.0 - u, 1.0 / b), 1.0 / a);
}

double kumaraswamy_cdf(double x, double a, double b) {
    x = std::clamp(x, 0.0, 1.0);
    return 1.0 - std::pow(1.0 - std::pow(x, a), b);
}

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

double copula_pearson(double rho, double a, double b) {
    // With z_i = sqrt(rho) s + sqrt(1 - rho) e_i, E[g(z_1) g(z_2)] = E_s[h(s)^2] where
    // h(s) = E_e[g(sqrt(rho) s + sqrt(1 - rho) e)]. Trapezoid rule on [-8, 8] in both variables.
    constexpr int kPoints = 401;
    constexpr double kHalfWidth = 8.0;
    const double step = 2.0 * kHalfWidth / (kPoints - 1);
    std::vector<double> node(kPoints), weight(kPoints);
    for (int k = 0; k < kPoints; ++k) {
        node[k] = -kHalfWidth + step * k;
        weight[k] = step * std::exp(-0.5 * node[k] * node[k]) / std::sqrt(2.0 * std::numbers::pi);
    }
    weight.front() *= 0.5;
    weight.back() *= 0.5;
    auto g = [&](double z) { return kumaraswamy_quantile(normal_cdf(z), a, b); };

    double mean = 0.0, second = 0.0;
    for (int k = 0; k < kPoints; ++k) {
        const double gk = g(node[k]);
        mean += weight[k] * gk;
        second += weight[k] * gk * gk;
    }
    const double var = second - mean * mean;
    const double sr = std::sqrt(std::clamp(rho, 0.0, 1.0));
    const double se = std::sqrt(1.0 - std::clamp(rho, 0.0, 1.0));
    double cross = 0.0;
    for (int i = 0; i < kPoints; ++i) {
        double h = 0.0;
        for (int j = 0; j < kPoints; ++j) h += weight[j] * g(sr * node[i] + se * node[j]);
        cross += weight[i] * h * h;
    }
    return (cross - mean * mean) / var;
}

double calibrate_latent_correlation(double target, double a, double b) {
    if (!(target >= 0.0 && target <= 1.0)) throw ValidationError("correlation_target must lie in [0, 1]");
    if (target == 0.0 || target == 1.0) return target;
    static std::mutex mutex;
    static std::map<std::tuple<double, double, double>, double> cache;
    const auto key = std::make_tuple(target, a, b);
    {
        std::lock_guard lock(mutex);
        if (auto it = cache.find(key); it != cache.end()) return it->second;
    }
    // Pearson is increasing in the latent correlation.
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 30; ++it) {
        const double mid = 0.5 * (lo + hi);
        (copula_pearson(mid, a, b) < target ? lo : hi) = mid;
    }
    const double rho = 0.5 * (lo + hi);
    std::lock_guard lock(mutex);
    cache.emplace(key, rho);
    return rho;
}

std::array<std::size_t, 3> split_sizes(std::size_t n) {
    const auto train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * 8.0 / 11.0));
    const auto val = std::min(n - train, static_cast<std::size_t>(std::llround(static_cast<double>(n) * 2.0 / 11.0)));
    return {train, val, n - train - val};
}

ScenarioSet sample_scenarios(const grid::GridModel& model, const SamplingConfig& config) {
    if (config.n_samples == 0) throw ValidationError("n_samples must be at least 1");
    if (!(config.load_low >= 0.0 && config.load_low <= config.load_high))
        throw ValidationError("load bounds must satisfy 0 <= load_low <= load_high");
    if (!(config.kumaraswamy_a > 0.0 && config.kumaraswamy_b > 0.0))
        throw ValidationError("Kumaraswamy parameters must be positive");

    ScenarioSet set;
    set.config = config;
    const std::size_t nd = model.num_loads();
    set.latent_correlation =
        nd > 1 ? calibrate_latent_correlation(config.correlation_target, config.kumaraswamy_a, config.kumaraswamy_b)
               : 0.0;
    const double sr = std::sqrt(set.latent_correlation);
    const double se = std::sqrt(1.0 - set.latent_correlation);
    const auto nominal = acpf::LoadScenario::nominal(model);

    Rng rng = make_rng(config.seed, "scenarios");
    std::normal_distribution<double> normal(0.0, 1.0);
    set.num_loads = nd;
    set.fractions_flat.resize(config.n_samples * nd);
    set.scenarios.reserve(config.n_samples);
    for (std::size_t k = 0; k < config.n_samples; ++k) {
        const double common = normal(rng);
        acpf::LoadScenario s = nominal;
        for (std::size_t d = 0; d < nd; ++d) {
            const double z = sr * common + se * normal(rng);
            const double q = kumaraswamy_quantile(normal_cdf(z), config.kumaraswamy_a, config.kumaraswamy_b);
            const double f = config.load_low + (config.load_high - config.load_low) * q;
            set.fractions_flat[k * nd + d] = f;
            s.p_d(static_cast<Eigen::Index>(d)) *= f;
            s.q_d(static_cast<Eigen::Index>(d)) *= f;
        }
        set.scenarios.push_back(std::move(s));
    }
    const auto sizes = split_sizes(config.n_samples);
    set.splits.assign(sizes[0], Split::Train);
    set.splits.insert(set.splits.end(), sizes[1], Split::Val);
    set.splits.insert(set.splits.end(), sizes[2], Split::Test);
    return set;
}

}  // namespace opfcert::data
