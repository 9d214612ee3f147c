#include "opfcert/data/dataset.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include "opfcert/common/errors.hpp"
#include "opfcert/common/parallel.hpp"
#include "opfcert/version.hpp"

namespace opfcert::data {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

bool LabeledSample::operator==(const LabeledSample& o) const {
    return load.p_d == o.load.p_d && load.q_d == o.load.q_d && p_g == o.p_g && v_g == o.v_g && v.v == o.v.v &&
           objective == o.objective && split == o.split;
}

std::vector<std::size_t> LabeledDataset::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < samples.size(); ++k)
        if (samples[k].split == split) out.push_back(k);
    return out;
}

MatrixXd LabeledDataset::inputs(Split split) const {
    const auto idx = indices(split);
    const auto nd = static_cast<Index>(load_bus_ids.size());
    MatrixXd out(static_cast<Index>(idx.size()), 2 * nd);
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = samples[idx[r]].load.to_input();
    return out;
}

MatrixXd LabeledDataset::power_targets(Split split) const {
    const auto idx = indices(split);
    const auto ng = static_cast<Index>(gen_bus_ids.size());
    MatrixXd out(static_cast<Index>(idx.size()), 2 * ng);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        out.row(static_cast<Index>(r)).head(ng) = samples[idx[r]].p_g;
        out.row(static_cast<Index>(r)).tail(ng) = samples[idx[r]].v_g;
    }
    return out;
}

MatrixXd LabeledDataset::voltage_targets(Split split) const {
    const auto idx = indices(split);
    const auto nb = static_cast<Index>(bus_ids.size());
    MatrixXd out(static_cast<Index>(idx.size()), 2 * nb);
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = samples[idx[r]].v.v;
    return out;
}

LabeledDataset empty_dataset(const grid::GridModel& model) {
    LabeledDataset d;
    for (const auto& l : model.loads()) d.load_bus_ids.push_back(l.bus_id);
    for (const auto& g : model.generators()) d.gen_bus_ids.push_back(g.bus_id);
    for (const auto& b : model.buses()) d.bus_ids.push_back(b.id);
    return d;
}

void check_compatible(const LabeledDataset& data, const grid::GridModel& model) {
    const auto ref = empty_dataset(model);
    if (data.load_bus_ids != ref.load_bus_ids || data.gen_bus_ids != ref.gen_bus_ids || data.bus_ids != ref.bus_ids)
        throw ValidationError("dataset columns do not match the network");
}

LabeledDataset generate_labels(const grid::GridModel& model, const grid::AdmittanceSet& adm, const ScenarioSet& set,
                               const LabelingOptions& options, LabelingStats* stats) {
    LabeledDataset out = empty_dataset(model);
    out.metadata = {{"format", "opfcert-dataset"}, {"version", kVersion}};
    const std::size_t target = set.size();
    std::vector<acpf::LoadScenario> pool = set.scenarios;
    std::vector<std::optional<opt::OPFSolution>> solved;
    std::size_t failed = 0;
    std::size_t converged = 0;
    while (true) {
        const std::size_t begin = solved.size();
        solved.resize(pool.size());
        parallel_for(pool.size() - begin, options.workers, [&](std::size_t k) {
            try {
                solved[begin + k] = opt::solve_opf(model, adm, pool[begin + k], std::nullopt, options.solver);
            } catch (const NumericalError&) {
            }
        });
        for (std::size_t k = begin; k < solved.size(); ++k) (solved[k] ? converged : failed) += 1;
        if (static_cast<double>(failed) > options.max_failure_fraction * static_cast<double>(solved.size()))
            throw LabelingFailed(std::to_string(failed) + " of " + std::to_string(solved.size()) +
                                 " scenarios could not be solved");
        if (converged >= target) break;
        // Continue the same sampling stream past the scenarios drawn so far.
        SamplingConfig more = set.config;
        more.n_samples = pool.size() + (target - converged);
        const auto extended = sample_scenarios(model, more);
        pool.insert(pool.end(), extended.scenarios.begin() + static_cast<std::ptrdiff_t>(pool.size()),
                    extended.scenarios.end());
    }
    if (stats) *stats = {solved.size(), failed};

    const auto sizes = split_sizes(target);
    for (std::size_t k = 0; k < pool.size() && out.samples.size() < target; ++k) {
        if (!solved[k]) continue;
        const auto& sol = *solved[k];
        LabeledSample s;
        s.load = pool[k];
        s.p_g = sol.p_g;
        const auto vm = sol.v.magnitudes();
        s.v_g.resize(static_cast<Index>(model.num_generators()));
        for (std::size_t g = 0; g < model.num_generators(); ++g)
            s.v_g(static_cast<Index>(g)) = vm(static_cast<Index>(model.gen_bus(g)));
        s.v = sol.v;
        s.objective = sol.objective;
        const std::size_t pos = out.samples.size();
        s.split = pos < sizes[0] ? Split::Train : pos < sizes[0] + sizes[1] ? Split::Val : Split::Test;
        out.samples.push_back(std::move(s));
    }
    return out;
}

namespace {

void put(std::ostream& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    out << buf;
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

double to_double(std::string_view tok, std::size_t line) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size() || tok.empty())
        throw FormatError("line " + std::to_string(line) + ": invalid number '" + std::string(tok) + "'");
    return v;
}

// Reads a run of `<prefix><id>` header columns starting at pos.
std::vector<int> id_columns(const std::vector<std::string_view>& header, std::size_t& pos, std::string_view prefix) {
    std::vector<int> ids;
    while (pos < header.size() && header[pos].starts_with(prefix)) {
        const auto tail = header[pos].substr(prefix.size());
        int id = 0;
        auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), id);
        if (ec != std::errc{} || ptr != tail.data() + tail.size() || tail.empty())
            throw FormatError("malformed dataset column '" + std::string(header[pos]) + "'");
        ids.push_back(id);
        ++pos;
    }
    return ids;
}

}  // namespace

void write_dataset(std::ostream& out, const LabeledDataset& data) {
    for (const auto& [key, value] : data.metadata) out << "# " << key << '=' << value << '\n';
    bool first = true;
    auto col = [&](const std::string& name) {
        if (!first) out << ',';
        out << name;
        first = false;
    };
    for (int id : data.load_bus_ids) col("pd_" + std::to_string(id));
    for (int id : data.load_bus_ids) col("qd_" + std::to_string(id));
    for (int id : data.gen_bus_ids) col("pg_" + std::to_string(id));
    for (int id : data.gen_bus_ids) col("vg_" + std::to_string(id));
    for (int id : data.bus_ids) col("vr_" + std::to_string(id));
    for (int id : data.bus_ids) col("vi_" + std::to_string(id));
    col("objective");
    col("split");
    out << '\n';
    for (const auto& s : data.samples) {
        auto row = [&](const Eigen::Ref<const VectorXd>& v) {
            for (Index k = 0; k < v.size(); ++k) {
                put(out, v(k));
                out << ',';
            }
        };
        row(s.load.p_d);
        row(s.load.q_d);
        row(s.p_g);
        row(s.v_g);
        row(s.v.v);
        put(out, s.objective);
        out << ',' << split_name(s.split) << '\n';
    }
}

void write_dataset(const std::string& path, const LabeledDataset& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write dataset '" + path + "'");
    write_dataset(out, data);
    if (!out) throw InputError("failed writing dataset '" + path + "'");
}

LabeledDataset read_dataset(std::istream& in) {
    LabeledDataset data;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.starts_with('#')) {
            if (have_header) throw FormatError("line " + std::to_string(line_no) + ": metadata after header");
            std::string_view body(line);
            body.remove_prefix(std::min<std::size_t>(2, body.size()));
            const auto eq = body.find('=');
            if (eq == std::string_view::npos)
                throw FormatError("line " + std::to_string(line_no) + ": metadata must be key=value");
            data.metadata.emplace_back(std::string(body.substr(0, eq)), std::string(body.substr(eq + 1)));
            continue;
        }
        if (!have_header) {
            const auto header = split_commas(line);
            std::size_t pos = 0;
            data.load_bus_ids = id_columns(header, pos, "pd_");
            const auto qd = id_columns(header, pos, "qd_");
            data.gen_bus_ids = id_columns(header, pos, "pg_");
            const auto vg = id_columns(header, pos, "vg_");
            data.bus_ids = id_columns(header, pos, "vr_");
            const auto vi = id_columns(header, pos, "vi_");
            if (qd != data.load_bus_ids || vg != data.gen_bus_ids || vi != data.bus_ids || data.bus_ids.empty() ||
                pos + 2 != header.size() || header[pos] != "objective" || header[pos + 1] != "split")
                throw FormatError("line " + std::to_string(line_no) + ": unexpected dataset header");
            have_header = true;
            continue;
        }
        if (line.empty()) continue;
        const auto cells = split_commas(line);
        const auto nd = static_cast<Index>(data.load_bus_ids.size());
        const auto ng = static_cast<Index>(data.gen_bus_ids.size());
        const auto nb = static_cast<Index>(data.bus_ids.size());
        const auto expected = static_cast<std::size_t>(2 * nd + 2 * ng + 2 * nb + 2);
        if (cells.size() != expected)
            throw FormatError("line " + std::to_string(line_no) + ": expected " + std::to_string(expected) +
                              " columns, found " + std::to_string(cells.size()));
        std::size_t c = 0;
        auto take = [&](Index n) {
            VectorXd v(n);
            for (Index k = 0; k < n; ++k) v(k) = to_double(cells[c++], line_no);
            return v;
        };
        LabeledSample s;
        s.load.p_d = take(nd);
        s.load.q_d = take(nd);
        s.p_g = take(ng);
        s.v_g = take(ng);
        s.v = acpf::VoltageState(take(2 * nb));
        s.objective = to_double(cells[c++], line_no);
        s.split = parse_split(cells[c]);
        data.samples.push_back(std::move(s));
    }
    if (!have_header) throw FormatError("dataset has no header row");
    return data;
}

LabeledDataset read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open dataset '" + path + "'");
    return read_dataset(in);
}

}  // namespace opfcert::data
