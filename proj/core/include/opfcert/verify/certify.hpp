#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "opfcert/bounds/worst_case.hpp"

namespace opfcert::verify {

enum class Status { VerifiedSafe, Falsified, Inconclusive };

const char* status_name(Status s);
Status parse_status(std::string_view name);

/// Why branch-and-bound stopped.
enum class StopReason { Converged, Subdomains, Timeout };

const char* stop_name(StopReason r);

/// Certified worst-case violation of one constraint over a box (pu; squared pu for Balance).
/// lower <= upper; violation(witness) == lower.
struct Certificate {
    bounds::ConstraintId id;
    double upper = 0.0;
    double lower = 0.0;
    Eigen::VectorXd witness;
    double gap = 0.0;  ///< upper - lower
    Status status = Status::Inconclusive;
    StopReason stop = StopReason::Converged;
    std::size_t subdomains = 0;
    double seconds = 0.0;
};

/// Signed distance past the limit whose positive part is the violation: for box limits
/// max(z - max, min - z), for flow |l| - limit, for Balance the squared mismatch.
double margin(const nn::MlpModel& model, const nn::GridContext& ctx, const Eigen::VectorXd& x,
              const bounds::ConstraintId& id);
/// margin and its gradient with respect to the physical input.
std::pair<double, Eigen::VectorXd> margin_gradient(const nn::MlpModel& model, const nn::GridContext& ctx,
                                                   const Eigen::VectorXd& x, const bounds::ConstraintId& id);

struct AttackOptions {
    int restarts = 8;  ///< random starts besides the box center
    int steps = 40;
    double step_fraction = 0.1;  ///< first step as a fraction of the box width, decays linearly
    std::uint64_t seed = 0;
};

struct AttackResult {
    double violation = 0.0;
    Eigen::VectorXd witness;
};

/// Signed-gradient ascent on the margin, projected onto the box. The returned violation is
/// the forward-evaluated violation at the witness.
AttackResult attack(const nn::MlpModel& model, const nn::GridContext& ctx, const bounds::Box& box,
                    const bounds::ConstraintId& id, const AttackOptions& options = {});

struct Budget {
    std::size_t max_subdomains = 2000;
    double timeout_seconds = 100.0;  ///< <= 0 disables the clock
};

/// 100 s per constraint up to 118 buses, 300 s above.
Budget default_budget(Eigen::Index num_buses);

struct CertifyOptions {
    Budget budget;
    double gap_tolerance = 1e-4;
    double safe_tolerance = 1e-6;  ///< upper <= this is verified safe, lower > this is falsified
    bounds::WorstCaseOptions bounds{bounds::IntermediateMode::Crown, bounds::NormMode::Exact};
    AttackOptions attack;
    std::size_t batch = 8;  ///< subdomains split per round; results do not depend on workers
    unsigned workers = 1;
};

/// Best-first input branch-and-bound. Splits the coordinate with the largest
/// width x bound-coefficient magnitude; children inherit the parent bound when it is tighter.
/// The returned upper bound is sound whatever stopped the search.
Certificate certify(const nn::MlpModel& model, const nn::GridContext& ctx, const bounds::Box& box,
                    const bounds::ConstraintId& id, const CertifyOptions& options = {});

std::vector<Certificate> certify_all(const nn::MlpModel& model, const nn::GridContext& ctx, const bounds::Box& box,
                                     const std::vector<bounds::ConstraintId>& ids, const CertifyOptions& options = {});

/// Largest upper bound per constraint kind present in certs.
std::vector<std::pair<bounds::ConstraintKind, double>> kind_maxima(const std::vector<Certificate>& certs);

struct SweepRow {
    double delta = 0.0;
    bounds::ConstraintId id;
    double nu = 0.0;
    double percent = 100.0;  ///< nu relative to the delta = 0 row; 100 throughout when that is 0
};

const std::vector<double>& default_deltas();

/// Certified nu per constraint over shrinking load domains. Bounds are carried as a running
/// minimum over the nested boxes, so every row is non-increasing in delta.
std::vector<SweepRow> delta_sweep(const nn::MlpModel& model, const nn::GridContext& ctx,
                                  const grid::GridModel& grid, const std::vector<bounds::ConstraintId>& ids,
                                  const std::vector<double>& deltas = default_deltas(),
                                  const CertifyOptions& options = {});

nlohmann::json to_json(const Certificate& c);
Certificate certificate_from_json(const nlohmann::json& j);

/// Report document: certificates without timings, then a separate "timing" section.
nlohmann::json report_json(const std::vector<Certificate>& certs, const std::string& config_hash);
void write_report(const std::string& path, const std::vector<Certificate>& certs, const std::string& config_hash);
std::vector<Certificate> read_report(const std::string& path);

/// CSV with header delta,constraint,nu,percent.
void write_sweep(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace opfcert::verify
