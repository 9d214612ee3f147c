#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "opfcert/common/errors.hpp"
#include "opfcert/grid/grid_model.hpp"

namespace opfcert::grid {
namespace {

struct Row {
    std::size_t line;
    std::vector<double> values;
};

struct RawCase {
    std::optional<double> base_mva;
    std::map<std::string, std::vector<Row>, std::less<>> tables;
};

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

double parse_number(std::string_view tok, std::size_t line) {
    if (tok == "Inf" || tok == "inf") return std::numeric_limits<double>::infinity();
    if (tok == "-Inf" || tok == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const char* begin = tok.data();
    if (!tok.empty() && tok.front() == '+') ++begin;
    auto [ptr, ec] = std::from_chars(begin, tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size())
        throw ParseError(line, "invalid number '" + std::string(tok) + "'");
    return v;
}

// Splits a row fragment on whitespace and commas.
std::vector<double> parse_row(std::string_view frag, std::size_t line) {
    std::vector<double> out;
    std::size_t i = 0;
    while (i < frag.size()) {
        while (i < frag.size() && (frag[i] == ' ' || frag[i] == '\t' || frag[i] == ',' || frag[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < frag.size() && frag[j] != ' ' && frag[j] != '\t' && frag[j] != ',' && frag[j] != '\r') ++j;
        if (j > i) out.push_back(parse_number(frag.substr(i, j - i), line));
        i = j;
    }
    return out;
}

RawCase tokenize(std::string_view text) {
    RawCase raw;
    std::string current;  // name of the open matrix section, empty when none
    bool skipping = false;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (auto pct = line.find('%'); pct != std::string_view::npos) line = line.substr(0, pct);
        line = trim(line);
        if (line.empty()) {
            if (end == text.size()) break;
            continue;
        }

        if (current.empty() && !skipping) {
            if (line.starts_with("function")) continue;
            if (!line.starts_with("mpc.")) throw ParseError(line_no, "unexpected statement '" + std::string(line) + "'");
            const auto eq = line.find('=');
            if (eq == std::string_view::npos) throw ParseError(line_no, "expected assignment");
            const std::string name(trim(line.substr(4, eq - 4)));
            std::string_view rhs = trim(line.substr(eq + 1));
            if (name == "baseMVA") {
                if (!rhs.ends_with(';')) throw ParseError(line_no, "missing ';' after baseMVA");
                raw.base_mva = parse_number(trim(rhs.substr(0, rhs.size() - 1)), line_no);
                continue;
            }
            const bool known = name == "bus" || name == "gen" || name == "branch" || name == "gencost";
            if (rhs.starts_with('[')) {
                if (raw.tables.contains(name)) throw ParseError(line_no, "duplicate section '" + name + "'");
                current = name;
                skipping = !known;
                if (known) raw.tables[name];
                line = trim(rhs.substr(1));
                if (line.empty()) continue;
            } else if (rhs.starts_with('{')) {
                // Cell arrays (bus names and similar) are outside the supported subset.
                if (rhs.find('}') == std::string_view::npos) {
                    current = name;
                    skipping = true;
                }
                continue;
            } else {
                if (known) throw ParseError(line_no, "section '" + name + "' must be a matrix");
                continue;  // scalar or string metadata such as mpc.version
            }
        }

        // Inside a matrix or cell array: consume rows until the closing bracket.
        bool closes = false;
        if (auto close = line.find_first_of("]}"); close != std::string_view::npos) {
            closes = true;
            auto tail = trim(line.substr(close + 1));
            if (!tail.empty() && tail != ";") throw ParseError(line_no, "unexpected text after closing bracket");
            line = line.substr(0, close);
        }
        if (!skipping) {
            std::size_t start = 0;
            while (start <= line.size()) {
                auto semi = line.find(';', start);
                if (semi == std::string_view::npos) semi = line.size();
                auto frag = trim(line.substr(start, semi - start));
                if (!frag.empty()) raw.tables[current].push_back({line_no, parse_row(frag, line_no)});
                start = semi + 1;
            }
        }
        if (closes) {
            current.clear();
            skipping = false;
        }
        if (end == text.size()) break;
    }
    if (!current.empty()) throw ParseError(line_no, "unterminated section '" + current + "'");
    return raw;
}

const std::vector<Row>& table(const RawCase& raw, const char* name) {
    auto it = raw.tables.find(name);
    if (it == raw.tables.end()) throw ParseError(0, std::string("missing section 'mpc.") + name + "'");
    return it->second;
}

void require_columns(const Row& row, std::size_t n, const char* section) {
    if (row.values.size() < n)
        throw ParseError(row.line, std::string(section) + " row has " + std::to_string(row.values.size()) +
                                       " columns, expected at least " + std::to_string(n));
}

int as_int(double v, const Row& row, const char* what) {
    if (v != std::floor(v)) throw ParseError(row.line, std::string(what) + " must be an integer");
    return static_cast<int>(v);
}

}  // namespace

GridModel parse_case(std::string_view text) {
    const RawCase raw = tokenize(text);
    if (!raw.base_mva) throw ParseError(0, "missing mpc.baseMVA");
    const double base = *raw.base_mva;
    if (!(base > 0.0)) throw ParseError(0, "baseMVA must be positive");

    std::vector<Bus> buses;
    std::vector<Load> loads;
    for (const auto& row : table(raw, "bus")) {
        require_columns(row, 13, "bus");
        const auto& v = row.values;
        const int id = as_int(v[0], row, "bus id");
        const int type = as_int(v[1], row, "bus type");
        if (type < 1 || type > 4) throw ParseError(row.line, "unknown bus type " + std::to_string(type));
        if (type == 4) throw ValidationError("isolated bus " + std::to_string(id) + " is not supported");
        buses.push_back({id, v[12], v[11], v[4] / base, v[5] / base, type == 3});
        if (v[2] != 0.0 || v[3] != 0.0) loads.push_back({id, v[2] / base, v[3] / base});
    }

    const auto& gen_rows = table(raw, "gen");
    const auto& cost_rows = table(raw, "gencost");
    if (cost_rows.size() < gen_rows.size())
        throw ParseError(cost_rows.empty() ? 0 : cost_rows.back().line, "gencost has fewer rows than gen");

    // Merge in-service generators per bus. Costs are averaged with the case dispatch as weights
    // (capacity when the case dispatch is zero at that bus).
    struct Aggregate {
        Generator gen;
        double weighted_cost_dispatch = 0.0;
        double dispatch = 0.0;
        double weighted_cost_capacity = 0.0;
        double capacity = 0.0;
    };
    std::vector<Aggregate> aggregates;
    for (std::size_t k = 0; k < gen_rows.size(); ++k) {
        const auto& row = gen_rows[k];
        require_columns(row, 10, "gen");
        const auto& v = row.values;

        const auto& crow = cost_rows[k];
        require_columns(crow, 4, "gencost");
        const int model = as_int(crow.values[0], crow, "cost model");
        if (model != 2) throw ParseError(crow.line, "only polynomial cost rows (model 2) are supported");
        const int ncoef = as_int(crow.values[3], crow, "cost coefficient count");
        require_columns(crow, 4 + static_cast<std::size_t>(std::max(ncoef, 0)), "gencost");
        double c1 = 0.0;
        for (int i = 0; i < ncoef; ++i) {
            const int power = ncoef - 1 - i;
            const double c = crow.values[4 + i];
            if (power >= 2 && c != 0.0)
                throw ParseError(crow.line, "nonlinear cost coefficient (power " + std::to_string(power) +
                                                ") must be 0; only linear costs are supported");
            if (power == 1) c1 = c;
        }

        if (v[7] <= 0.0) continue;  // out of service
        const int bus_id = as_int(v[0], row, "generator bus");
        const double pg = v[1] / base;
        Generator g{bus_id, v[9] / base, v[8] / base, v[4] / base, v[3] / base, c1 * base, v[5]};
        auto it = std::find_if(aggregates.begin(), aggregates.end(),
                               [&](const Aggregate& a) { return a.gen.bus_id == bus_id; });
        if (it == aggregates.end()) {
            aggregates.push_back({g});
            it = std::prev(aggregates.end());
        } else {
            it->gen.p_min += g.p_min;
            it->gen.p_max += g.p_max;
            it->gen.q_min += g.q_min;
            it->gen.q_max += g.q_max;
        }
        it->weighted_cost_dispatch += g.cost * std::max(pg, 0.0);
        it->dispatch += std::max(pg, 0.0);
        it->weighted_cost_capacity += g.cost * std::max(g.p_max, 0.0);
        it->capacity += std::max(g.p_max, 0.0);
    }
    std::vector<Generator> gens;
    for (auto& a : aggregates) {
        if (a.dispatch > 0.0)
            a.gen.cost = a.weighted_cost_dispatch / a.dispatch;
        else if (a.capacity > 0.0)
            a.gen.cost = a.weighted_cost_capacity / a.capacity;
        gens.push_back(a.gen);
    }

    std::vector<Branch> branches;
    std::vector<bool> has_limit;
    double max_limit = 0.0;
    for (const auto& row : table(raw, "branch")) {
        require_columns(row, 11, "branch");
        const auto& v = row.values;
        if (v[10] <= 0.0) continue;
        if (v[9] != 0.0)
            throw ValidationError("phase-shifting transformers are not supported (branch on line " +
                                  std::to_string(row.line) + ")");
        const double tap = v[8] == 0.0 ? 1.0 : v[8];
        // MVA rating converted to a current magnitude at 1.0 pu voltage.
        const double limit = v[5] / base;
        branches.push_back({as_int(v[0], row, "from bus"), as_int(v[1], row, "to bus"), v[2], v[3], v[4], tap,
                            limit});
        has_limit.push_back(limit > 0.0 && std::isfinite(limit));
        if (has_limit.back()) max_limit = std::max(max_limit, limit);
    }
    double cap = 10.0 * max_limit;
    if (max_limit == 0.0) {
        double total = 0.0;
        for (const auto& d : loads) total += std::hypot(d.p_nominal, d.q_nominal);
        cap = 10.0 * (total > 0.0 ? total : 1.0);
    }
    for (std::size_t l = 0; l < branches.size(); ++l)
        if (!has_limit[l]) branches[l].flow_limit = cap;

    return GridModel(std::move(buses), std::move(gens), std::move(branches), std::move(loads), base);
}

GridModel load_case_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open case file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_case(ss.str());
}

}  // namespace opfcert::grid
