#include "opfcert/grid/grid_model.hpp"

#include <cmath>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "opfcert/common/errors.hpp"

namespace opfcert::grid {
namespace {

void require(bool cond, const std::string& what) {
    if (!cond) throw ValidationError(what);
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

GridModel::GridModel(std::vector<Bus> buses, std::vector<Generator> generators, std::vector<Branch> branches,
                     std::vector<Load> loads, double base_mva)
    : buses_(std::move(buses)),
      generators_(std::move(generators)),
      branches_(std::move(branches)),
      loads_(std::move(loads)),
      base_mva_(base_mva) {
    require(!buses_.empty(), "grid has no buses");
    require(finite(base_mva_) && base_mva_ > 0.0, "base_mva must be positive");

    std::unordered_map<int, std::size_t> index;
    std::size_t slack_count = 0;
    for (std::size_t n = 0; n < buses_.size(); ++n) {
        const auto& b = buses_[n];
        require(index.emplace(b.id, n).second, "duplicate bus id " + std::to_string(b.id));
        require(finite(b.v_min) && finite(b.v_max) && finite(b.g_shunt) && finite(b.b_shunt),
                "bus " + std::to_string(b.id) + " has non-finite data");
        require(b.v_min < b.v_max, "bus " + std::to_string(b.id) + " has v_min >= v_max");
        require(b.v_min >= 0.0, "bus " + std::to_string(b.id) + " has negative v_min");
        if (b.is_slack) {
            ++slack_count;
            slack_ = n;
        }
    }
    require(slack_count == 1, "expected exactly one slack bus, found " + std::to_string(slack_count));

    auto lookup = [&](int id, const std::string& who) {
        auto it = index.find(id);
        require(it != index.end(), who + " references missing bus " + std::to_string(id));
        return it->second;
    };

    gen_of_bus_.assign(buses_.size(), -1);
    for (std::size_t g = 0; g < generators_.size(); ++g) {
        const auto& gen = generators_[g];
        const std::string who = "generator " + std::to_string(g);
        std::size_t n = lookup(gen.bus_id, who);
        require(gen_of_bus_[n] < 0, "more than one generator at bus " + std::to_string(gen.bus_id));
        require(finite(gen.p_min) && finite(gen.p_max) && finite(gen.q_min) && finite(gen.q_max) &&
                    finite(gen.cost) && finite(gen.v_set),
                who + " has non-finite data");
        require(gen.p_min <= gen.p_max, who + " has p_min > p_max");
        require(gen.q_min <= gen.q_max, who + " has q_min > q_max");
        gen_of_bus_[n] = static_cast<int>(g);
        gen_bus_.push_back(n);
    }
    require(gen_of_bus_[slack_] >= 0, "slack bus hosts no generator");

    load_of_bus_.assign(buses_.size(), -1);
    for (std::size_t d = 0; d < loads_.size(); ++d) {
        const auto& load = loads_[d];
        std::size_t n = lookup(load.bus_id, "load " + std::to_string(d));
        require(load_of_bus_[n] < 0, "more than one load at bus " + std::to_string(load.bus_id));
        require(finite(load.p_nominal) && finite(load.q_nominal), "load " + std::to_string(d) + " is non-finite");
        load_of_bus_[n] = static_cast<int>(d);
        load_bus_.push_back(n);
    }

    for (std::size_t l = 0; l < branches_.size(); ++l) {
        const auto& br = branches_[l];
        const std::string who = "branch " + std::to_string(l);
        branch_from_.push_back(lookup(br.from_bus, who));
        branch_to_.push_back(lookup(br.to_bus, who));
        require(branch_from_.back() != branch_to_.back(), who + " connects a bus to itself");
        require(finite(br.r) && finite(br.x) && finite(br.b_charging) && finite(br.tap) && finite(br.flow_limit),
                who + " has non-finite data");
        require(br.tap > 0.0, who + " has non-positive tap ratio");
        require(br.flow_limit > 0.0, who + " has non-positive flow limit");
    }

    for (std::size_t n = 0; n < buses_.size(); ++n)
        if (gen_of_bus_[n] < 0) non_gen_buses_.push_back(n);
}

std::size_t GridModel::bus_index(int id) const {
    for (std::size_t n = 0; n < buses_.size(); ++n)
        if (buses_[n].id == id) return n;
    throw ValidationError("unknown bus id " + std::to_string(id));
}

std::optional<std::size_t> GridModel::gen_at_bus(std::size_t n) const noexcept {
    if (gen_of_bus_[n] < 0) return std::nullopt;
    return static_cast<std::size_t>(gen_of_bus_[n]);
}

std::optional<std::size_t> GridModel::load_at_bus(std::size_t n) const noexcept {
    if (load_of_bus_[n] < 0) return std::nullopt;
    return static_cast<std::size_t>(load_of_bus_[n]);
}

bool GridModel::operator==(const GridModel& other) const {
    return base_mva_ == other.base_mva_ && buses_ == other.buses_ && generators_ == other.generators_ &&
           branches_ == other.branches_ && loads_ == other.loads_;
}

nlohmann::json to_json(const GridModel& model) {
    using nlohmann::json;
    json doc;
    doc["format"] = "opfcert-grid";
    doc["base_mva"] = model.base_mva();
    json buses = json::array();
    for (const auto& b : model.buses())
        buses.push_back({{"id", b.id},
                         {"v_min", b.v_min},
                         {"v_max", b.v_max},
                         {"g_shunt", b.g_shunt},
                         {"b_shunt", b.b_shunt},
                         {"is_slack", b.is_slack}});
    doc["buses"] = std::move(buses);
    json gens = json::array();
    for (const auto& g : model.generators())
        gens.push_back({{"bus_id", g.bus_id},
                        {"p_min", g.p_min},
                        {"p_max", g.p_max},
                        {"q_min", g.q_min},
                        {"q_max", g.q_max},
                        {"cost", g.cost},
                        {"v_set", g.v_set}});
    doc["generators"] = std::move(gens);
    json branches = json::array();
    for (const auto& br : model.branches())
        branches.push_back({{"from_bus", br.from_bus},
                            {"to_bus", br.to_bus},
                            {"r", br.r},
                            {"x", br.x},
                            {"b_charging", br.b_charging},
                            {"tap", br.tap},
                            {"flow_limit", br.flow_limit}});
    doc["branches"] = std::move(branches);
    json loads = json::array();
    for (const auto& d : model.loads())
        loads.push_back({{"bus_id", d.bus_id}, {"p_nominal", d.p_nominal}, {"q_nominal", d.q_nominal}});
    doc["loads"] = std::move(loads);
    return doc;
}

GridModel grid_from_json(const nlohmann::json& doc) {
    try {
        if (doc.value("format", std::string{}) != "opfcert-grid") throw FormatError("not an opfcert-grid document");
        std::vector<Bus> buses;
        for (const auto& b : doc.at("buses"))
            buses.push_back({b.at("id").get<int>(), b.at("v_min").get<double>(), b.at("v_max").get<double>(),
                             b.at("g_shunt").get<double>(), b.at("b_shunt").get<double>(),
                             b.at("is_slack").get<bool>()});
        std::vector<Generator> gens;
        for (const auto& g : doc.at("generators"))
            gens.push_back({g.at("bus_id").get<int>(), g.at("p_min").get<double>(), g.at("p_max").get<double>(),
                            g.at("q_min").get<double>(), g.at("q_max").get<double>(), g.at("cost").get<double>(),
                            g.at("v_set").get<double>()});
        std::vector<Branch> branches;
        for (const auto& br : doc.at("branches"))
            branches.push_back({br.at("from_bus").get<int>(), br.at("to_bus").get<int>(), br.at("r").get<double>(),
                                br.at("x").get<double>(), br.at("b_charging").get<double>(),
                                br.at("tap").get<double>(), br.at("flow_limit").get<double>()});
        std::vector<Load> loads;
        for (const auto& d : doc.at("loads"))
            loads.push_back({d.at("bus_id").get<int>(), d.at("p_nominal").get<double>(),
                             d.at("q_nominal").get<double>()});
        return GridModel(std::move(buses), std::move(gens), std::move(branches), std::move(loads),
                         doc.at("base_mva").get<double>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed grid document: ") + e.what());
    }
}

}  // namespace opfcert::grid
