#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace opfcert::grid {

// All quantities are per unit on the system base unless stated otherwise.

struct Bus {
    int id = 0;
    double v_min = 0.9;
    double v_max = 1.1;
    double g_shunt = 0.0;
    double b_shunt = 0.0;
    bool is_slack = false;

    bool operator==(const Bus&) const = default;
};

struct Generator {
    int bus_id = 0;
    double p_min = 0.0;
    double p_max = 0.0;
    double q_min = 0.0;
    double q_max = 0.0;
    double cost = 0.0;   ///< linear cost coefficient, $ per pu of active power
    double v_set = 1.0;  ///< voltage setpoint from the case file, used for cold starts

    bool operator==(const Generator&) const = default;
};

struct Branch {
    int from_bus = 0;
    int to_bus = 0;
    double r = 0.0;
    double x = 0.0;
    double b_charging = 0.0;  ///< total line charging susceptance
    double tap = 1.0;         ///< off-nominal turns ratio at the from end
    double flow_limit = 0.0;  ///< current magnitude limit

    bool operator==(const Branch&) const = default;
};

struct Load {
    int bus_id = 0;
    double p_nominal = 0.0;
    double q_nominal = 0.0;

    bool operator==(const Load&) const = default;
};

/// Validated static network description. Immutable after construction; every accessor
/// is const so one instance can be shared across threads.
///
/// Invariants (checked by the constructor, ValidationError otherwise):
/// exactly one slack bus, which hosts a generator; unique bus ids; every branch, generator
/// and load references an existing bus; at most one generator and one load per bus;
/// v_min < v_max; p_min <= p_max; q_min <= q_max; all limits finite.
class GridModel {
  public:
    GridModel(std::vector<Bus> buses, std::vector<Generator> generators, std::vector<Branch> branches,
              std::vector<Load> loads, double base_mva = 100.0);

    const std::vector<Bus>& buses() const noexcept { return buses_; }
    const std::vector<Generator>& generators() const noexcept { return generators_; }
    const std::vector<Branch>& branches() const noexcept { return branches_; }
    const std::vector<Load>& loads() const noexcept { return loads_; }
    double base_mva() const noexcept { return base_mva_; }

    std::size_t num_buses() const noexcept { return buses_.size(); }
    std::size_t num_generators() const noexcept { return generators_.size(); }
    std::size_t num_branches() const noexcept { return branches_.size(); }
    std::size_t num_loads() const noexcept { return loads_.size(); }

    /// Position of the bus with the given id; throws ValidationError for unknown ids.
    std::size_t bus_index(int id) const;
    std::size_t slack_index() const noexcept { return slack_; }
    /// Bus position of generator g.
    std::size_t gen_bus(std::size_t g) const noexcept { return gen_bus_[g]; }
    /// Generator at bus position n, if any.
    std::optional<std::size_t> gen_at_bus(std::size_t n) const noexcept;
    std::size_t load_bus(std::size_t d) const noexcept { return load_bus_[d]; }
    std::optional<std::size_t> load_at_bus(std::size_t n) const noexcept;
    std::size_t branch_from(std::size_t l) const noexcept { return branch_from_[l]; }
    std::size_t branch_to(std::size_t l) const noexcept { return branch_to_[l]; }
    /// Positions of buses that host no generator, ascending.
    const std::vector<std::size_t>& non_generator_buses() const noexcept { return non_gen_buses_; }

    bool operator==(const GridModel& other) const;

  private:
    std::vector<Bus> buses_;
    std::vector<Generator> generators_;
    std::vector<Branch> branches_;
    std::vector<Load> loads_;
    double base_mva_;

    std::size_t slack_ = 0;
    std::vector<std::size_t> gen_bus_;
    std::vector<std::size_t> load_bus_;
    std::vector<std::size_t> branch_from_;
    std::vector<std::size_t> branch_to_;
    std::vector<int> gen_of_bus_;
    std::vector<int> load_of_bus_;
    std::vector<std::size_t> non_gen_buses_;
};

/// Parses the supported MATPOWER subset (`mpc.baseMVA`, `mpc.bus`, `mpc.gen`, `mpc.branch`,
/// `mpc.gencost`). Generators sharing a bus are merged into one equivalent machine.
/// Throws ParseError for malformed text and ValidationError for invariant violations.
GridModel parse_case(std::string_view text);
GridModel load_case_file(const std::string& path);

/// Canonical JSON form; from_json(to_json(m)) == m.
nlohmann::json to_json(const GridModel& model);
GridModel grid_from_json(const nlohmann::json& doc);

}  // namespace opfcert::grid
