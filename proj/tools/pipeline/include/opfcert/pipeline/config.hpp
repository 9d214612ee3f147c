#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "opfcert/bounds/worst_case.hpp"
#include "opfcert/data/sampling.hpp"
#include "opfcert/nn/losses.hpp"

namespace opfcert::pipeline {

enum class Variant { Base, Crown };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

/// Everything a run depends on. Zero for hidden, batch, learning_rate or a negative
/// timeout selects the size-keyed default.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "run";
    unsigned workers = 1;

    std::string case_path;
    data::SamplingConfig sampling;

    nn::Head head = nn::Head::Voltage;
    Variant variant = Variant::Base;
    Eigen::Index hidden = 0;
    std::size_t epochs = 1000;
    std::size_t batch = 0;
    double learning_rate = 0.0;
    std::size_t prune_epoch = 500;
    double prune_fraction = 0.5;
    double wc_delta = 0.0;  ///< load-domain reduction of the training penalty box
    nn::LossWeights weights = default_weights();

    std::size_t max_subdomains = 200;
    double timeout_seconds = -1.0;  ///< per constraint; 0 disables the clock
    double gap_tolerance = 1e-4;
    bounds::WorstCaseOptions certify_bounds{bounds::IntermediateMode::Crown, bounds::NormMode::Exact};
    int attack_restarts = 8;
    int attack_steps = 40;
    std::vector<double> deltas{0.0, 0.05, 0.10, 0.15, 0.20};

    std::size_t restore_scenarios = 100;

    /// Loss weights with the worst-case weight used by the crown variant.
    static nn::LossWeights default_weights();

    /// Throws ValidationError on inconsistent values.
    void validate() const;
};

/// Sets one `section.key` from its text form; throws ValidationError for unknown keys or
/// malformed values.
void set_value(RunConfig& config, const std::string& name, const std::string& value);

/// INI text with sections run, case, data, train, weights, verify, restore. Unknown
/// sections or keys are rejected. Relative case paths resolve against base_dir. The result is not validated,
/// so flags can still override it.
RunConfig parse_config(std::istream& in, const std::string& base_dir = ".");
RunConfig load_config(const std::string& path);

/// Sorted `section.key=value` lines of every setting that affects artifacts (the output
/// directory and worker count are excluded).
std::string canonical_text(const RunConfig& config);
/// First 16 hex digits of the SHA-256 of canonical_text.
std::string config_hash(const RunConfig& config);
std::string sha256_hex(const std::string& bytes);

}  // namespace opfcert::pipeline
