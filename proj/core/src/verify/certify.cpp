#include "opfcert/verify/certify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <queue>

#include "opfcert/common/errors.hpp"
#include "opfcert/common/parallel.hpp"
#include "opfcert/common/random.hpp"
#include "opfcert/version.hpp"

namespace opfcert::verify {

namespace ad = nn::ad;
using bounds::Box;
using bounds::ConstraintId;
using bounds::ConstraintKind;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

const char* status_name(Status s) {
    switch (s) {
        case Status::VerifiedSafe: return "verified_safe";
        case Status::Falsified: return "falsified";
        case Status::Inconclusive: return "inconclusive";
    }
    return "inconclusive";
}

Status parse_status(std::string_view name) {
    for (Status s : {Status::VerifiedSafe, Status::Falsified, Status::Inconclusive})
        if (name == status_name(s)) return s;
    throw FormatError("unknown certificate status '" + std::string(name) + "'");
}

const char* stop_name(StopReason r) {
    switch (r) {
        case StopReason::Converged: return "converged";
        case StopReason::Subdomains: return "subdomains";
        case StopReason::Timeout: return "timeout";
    }
    return "converged";
}

namespace {

StopReason parse_stop(std::string_view name) {
    for (StopReason r : {StopReason::Converged, StopReason::Subdomains, StopReason::Timeout})
        if (name == stop_name(r)) return r;
    throw FormatError("unknown stop reason '" + std::string(name) + "'");
}

ad::Var scalar_const(ad::Tape& t, double v) { return t.constant(MatrixXd::Constant(1, 1, v)); }

ad::Var dot(ad::Tape& t, const Eigen::RowVectorXd& row, const ad::Var& y) { return ad::matmul(t.constant(row), y); }

ad::Var box_margin(ad::Tape& t, const ad::Var& z, double min, double max) {
    return ad::max(ad::sub(z, scalar_const(t, max)), ad::sub(scalar_const(t, min), z));
}

ad::Var hypot(const ad::Var& a, const ad::Var& b) { return ad::sqrt(ad::add(ad::square(a), ad::square(b))); }

// Margin as a tape expression of the physical input x (n x 1).
ad::Var margin_var(ad::Tape& t, const nn::MlpModel& model, const nn::GridContext& ctx, const ad::Var& x,
                   const ConstraintId& id) {
    const nn::MlpVars vars = nn::bind(model, t, false);
    const ad::Var xn = ad::div(ad::sub(x, t.constant(model.input_norm.shift)), t.constant(model.input_norm.scale));
    const ad::Var y = ad::add(ad::mul(nn::forward(vars, xn), t.constant(model.output_norm.scale)),
                              t.constant(model.output_norm.shift));
    const Index i = id.index;
    auto at = [&](Index k) { return ad::rows(y, k, 1); };
    if (model.head == nn::Head::Power) {
        if (id.kind == ConstraintKind::Pg) return box_margin(t, at(i), ctx.p_min(i), ctx.p_max(i));
        const Index bus = ctx.gen_bus[static_cast<std::size_t>(i)];
        return box_margin(t, at(ctx.num_generators + i), ctx.v_min(bus), ctx.v_max(bus));
    }
    const Index nb = ctx.num_buses, nl = ctx.num_branches, nd = ctx.num_loads;
    auto injection = [&](Index n) {
        const ad::Var ir = dot(t, ctx.y_bus_rect.row(n), y), ii = dot(t, ctx.y_bus_rect.row(nb + n), y);
        const ad::Var vr = at(n), vi = at(nb + n);
        Eigen::RowVectorXd pd = Eigen::RowVectorXd::Zero(2 * nd), qd = Eigen::RowVectorXd::Zero(2 * nd);
        pd.head(nd) = ctx.load_to_bus.row(n);
        qd.tail(nd) = ctx.load_to_bus.row(n);
        const ad::Var p = ad::add(ad::add(ad::mul(vr, ir), ad::mul(vi, ii)), dot(t, pd, x));
        const ad::Var q = ad::add(ad::sub(ad::mul(vi, ir), ad::mul(vr, ii)), dot(t, qd, x));
        return std::pair{p, q};
    };
    switch (id.kind) {
        case ConstraintKind::Pg:
            return box_margin(t, injection(ctx.gen_bus[static_cast<std::size_t>(i)]).first, ctx.p_min(i),
                              ctx.p_max(i));
        case ConstraintKind::Qg:
            return box_margin(t, injection(ctx.gen_bus[static_cast<std::size_t>(i)]).second, ctx.q_min(i),
                              ctx.q_max(i));
        case ConstraintKind::Vm: return box_margin(t, hypot(at(i), at(nb + i)), ctx.v_min(i), ctx.v_max(i));
        case ConstraintKind::Flow: {
            auto current = [&](Index row) { return dot(t, ctx.y_l_rect.row(row), y); };
            const ad::Var from = hypot(current(i), current(nl + i));
            const ad::Var to = hypot(current(2 * nl + i), current(3 * nl + i));
            return ad::sub(ad::max(from, to), scalar_const(t, ctx.flow_limit(i)));
        }
        case ConstraintKind::Balance: {
            const auto [p, q] = injection(i);
            return ad::add(ad::square(p), ad::square(q));
        }
        case ConstraintKind::Vg: break;
    }
    throw ValidationError("constraint " + id.label() + " does not exist for a voltage head");
}

void check(const nn::MlpModel& model, const nn::GridContext& ctx, const ConstraintId& id) {
    // violation() validates the head, dimensions and constraint id.
    (void)bounds::violation(model, ctx, VectorXd::Zero(ctx.input_dim()), id);
}

std::uint64_t stream_key(const ConstraintId& id) {
    return static_cast<std::uint64_t>(id.kind) * 1000003ULL + static_cast<std::uint64_t>(id.index);
}

struct Node {
    Box box;
    double upper = 0.0;
    VectorXd sensitivity;
    std::size_t id = 0;
};

struct Looser {
    // Largest upper bound first, then the older subdomain.
    bool operator()(const Node& a, const Node& b) const {
        if (a.upper != b.upper) return a.upper < b.upper;
        return a.id > b.id;
    }
};

Index split_coordinate(const Node& n) {
    const VectorXd width = n.box.width();
    const VectorXd score = width.cwiseProduct(n.sensitivity);
    Index d = 0;
    if (score.maxCoeff(&d) > 0.0) return d;
    width.maxCoeff(&d);
    return d;
}

}  // namespace

double margin(const nn::MlpModel& model, const nn::GridContext& ctx, const VectorXd& x, const ConstraintId& id) {
    check(model, ctx, id);
    ad::Tape t;
    return margin_var(t, model, ctx, t.constant(x), id).scalar();
}

std::pair<double, VectorXd> margin_gradient(const nn::MlpModel& model, const nn::GridContext& ctx, const VectorXd& x,
                                            const ConstraintId& id) {
    check(model, ctx, id);
    ad::Tape t;
    const ad::Var xv = t.variable(x);
    const ad::Var m = margin_var(t, model, ctx, xv, id);
    t.backward(m);
    return {m.scalar(), t.grad(xv)};
}

AttackResult attack(const nn::MlpModel& model, const nn::GridContext& ctx, const Box& box, const ConstraintId& id,
                    const AttackOptions& options) {
    check(model, ctx, id);
    if (box.dim() != ctx.input_dim()) throw ValidationError("box dimension does not match the network inputs");
    Rng rng(derive_seed(options.seed, "attack", stream_key(id)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<VectorXd> starts{box.center()};
    for (int r = 0; r < options.restarts; ++r) {
        VectorXd x(box.dim());
        for (Index d = 0; d < box.dim(); ++d) x(d) = box.lower(d) + unit(rng) * (box.upper(d) - box.lower(d));
        starts.push_back(std::move(x));
    }
    const VectorXd width = box.width();
    double best = -std::numeric_limits<double>::infinity();
    VectorXd witness = starts.front();
    for (VectorXd x : starts) {
        for (int s = 0; s <= options.steps; ++s) {
            const auto [m, g] = margin_gradient(model, ctx, x, id);
            if (m > best) {
                best = m;
                witness = x;
            }
            if (s == options.steps) break;
            const double frac = options.step_fraction * (1.0 - static_cast<double>(s) / options.steps);
            x = box.clamp(x + frac * width.cwiseProduct(g.cwiseSign()));
        }
    }
    return {bounds::violation(model, ctx, witness, id), witness};
}

Budget default_budget(Index num_buses) {
    Budget b;
    b.timeout_seconds = num_buses <= 118 ? 100.0 : 300.0;
    return b;
}

Certificate certify(const nn::MlpModel& model, const nn::GridContext& ctx, const Box& box, const ConstraintId& id,
                    const CertifyOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

    Certificate c;
    c.id = id;
    const AttackResult incumbent = attack(model, ctx, box, id, options.attack);
    c.lower = incumbent.violation;
    c.witness = incumbent.witness;

    const bounds::ConstraintBound root = bounds::bound_constraint(model, ctx, box, id, options.bounds);
    std::priority_queue<Node, std::vector<Node>, Looser> open;
    std::size_t next_id = 0;
    open.push({box, root.upper, root.sensitivity, next_id++});
    c.subdomains = 1;

    const std::size_t max_sub = std::max<std::size_t>(options.budget.max_subdomains, 1);
    const std::size_t batch = std::max<std::size_t>(options.batch, 1);
    c.stop = StopReason::Converged;
    while (!open.empty()) {
        const double upper = open.top().upper;
        if (upper - c.lower <= options.gap_tolerance || upper <= options.safe_tolerance) break;
        if (c.subdomains + 2 > max_sub) {
            c.stop = StopReason::Subdomains;
            break;
        }
        if (options.budget.timeout_seconds > 0.0 && elapsed() > options.budget.timeout_seconds) {
            c.stop = StopReason::Timeout;
            break;
        }
        std::vector<Node> parents;
        while (!open.empty() && parents.size() < batch && c.subdomains + 2 * (parents.size() + 1) <= max_sub) {
            parents.push_back(open.top());
            open.pop();
        }
        std::vector<Node> children(2 * parents.size());
        std::vector<double> center_violation(children.size());
        for (std::size_t p = 0; p < parents.size(); ++p) {
            auto [left, right] = parents[p].box.split(split_coordinate(parents[p]));
            children[2 * p].box = std::move(left);
            children[2 * p + 1].box = std::move(right);
        }
        parallel_for(children.size(), options.workers, [&](std::size_t k) {
            const bounds::ConstraintBound b = bounds::bound_constraint(model, ctx, children[k].box, id, options.bounds);
            children[k].upper = std::min(b.upper, parents[k / 2].upper);
            children[k].sensitivity = b.sensitivity;
            center_violation[k] = bounds::violation(model, ctx, children[k].box.center(), id);
        });
        for (std::size_t k = 0; k < children.size(); ++k) {
            children[k].id = next_id++;
            ++c.subdomains;
            if (center_violation[k] > c.lower) {
                c.lower = center_violation[k];
                c.witness = children[k].box.center();
            }
        }
        for (auto& child : children)
            if (child.upper > c.lower) open.push(std::move(child));
    }
    c.upper = open.empty() ? c.lower : std::max(open.top().upper, c.lower);
    c.gap = c.upper - c.lower;
    if (c.upper <= options.safe_tolerance)
        c.status = Status::VerifiedSafe;
    else if (c.lower > options.safe_tolerance)
        c.status = Status::Falsified;
    else
        c.status = Status::Inconclusive;
    c.seconds = elapsed();
    return c;
}

std::vector<Certificate> certify_all(const nn::MlpModel& model, const nn::GridContext& ctx, const Box& box,
                                     const std::vector<ConstraintId>& ids, const CertifyOptions& options) {
    std::vector<Certificate> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(certify(model, ctx, box, id, options));
    return out;
}

std::vector<std::pair<ConstraintKind, double>> kind_maxima(const std::vector<Certificate>& certs) {
    std::vector<std::pair<ConstraintKind, double>> out;
    for (const auto& c : certs) {
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& e) { return e.first == c.id.kind; });
        if (it == out.end())
            out.emplace_back(c.id.kind, c.upper);
        else
            it->second = std::max(it->second, c.upper);
    }
    return out;
}

const std::vector<double>& default_deltas() {
    static const std::vector<double> d{0.0, 0.05, 0.10, 0.15, 0.20};
    return d;
}

std::vector<SweepRow> delta_sweep(const nn::MlpModel& model, const nn::GridContext& ctx, const grid::GridModel& grid,
                                  const std::vector<ConstraintId>& ids, const std::vector<double>& deltas,
                                  const CertifyOptions& options) {
    if (deltas.empty()) throw ValidationError("delta sweep needs at least one delta");
    if (!std::is_sorted(deltas.begin(), deltas.end()))
        throw ValidationError("delta sweep values must be increasing");
    std::vector<double> running(ids.size(), std::numeric_limits<double>::infinity());
    std::vector<double> base(ids.size(), 0.0);
    std::vector<SweepRow> rows;
    for (std::size_t di = 0; di < deltas.size(); ++di) {
        const Box box = Box::load_domain(grid, deltas[di]);
        const auto certs = certify_all(model, ctx, box, ids, options);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            running[k] = std::min(running[k], certs[k].upper);
            if (di == 0) base[k] = running[k];
            SweepRow r;
            r.delta = deltas[di];
            r.id = ids[k];
            r.nu = running[k];
            r.percent = base[k] > 0.0 ? 100.0 * running[k] / base[k] : 100.0;
            rows.push_back(r);
        }
    }
    return rows;
}

json to_json(const Certificate& c) {
    return {{"constraint", c.id.label()},
            {"kind", bounds::kind_name(c.id.kind)},
            {"index", c.id.index},
            {"upper", c.upper},
            {"lower", c.lower},
            {"gap", c.gap},
            {"status", status_name(c.status)},
            {"stop", stop_name(c.stop)},
            {"subdomains", c.subdomains},
            {"witness", std::vector<double>(c.witness.data(), c.witness.data() + c.witness.size())}};
}

Certificate certificate_from_json(const json& j) {
    try {
        Certificate c;
        c.id = {bounds::parse_kind(j.at("kind").get<std::string>()), j.at("index").get<Index>()};
        c.upper = j.at("upper").get<double>();
        c.lower = j.at("lower").get<double>();
        c.gap = j.at("gap").get<double>();
        c.status = parse_status(j.at("status").get<std::string>());
        c.stop = parse_stop(j.at("stop").get<std::string>());
        c.subdomains = j.at("subdomains").get<std::size_t>();
        const auto w = j.at("witness").get<std::vector<double>>();
        c.witness = Eigen::Map<const VectorXd>(w.data(), static_cast<Index>(w.size()));
        return c;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed certificate: ") + e.what());
    }
}

json report_json(const std::vector<Certificate>& certs, const std::string& config_hash) {
    json list = json::array(), timing = json::array();
    for (const auto& c : certs) {
        list.push_back(to_json(c));
        timing.push_back({{"constraint", c.id.label()}, {"seconds", c.seconds}});
    }
    return {{"format", "opfcert-verification"},
            {"version", kVersion},
            {"config_hash", config_hash},
            {"certificates", std::move(list)},
            {"timing", std::move(timing)}};
}

void write_report(const std::string& path, const std::vector<Certificate>& certs, const std::string& config_hash) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    out << report_json(certs, config_hash).dump(1) << '\n';
}

std::vector<Certificate> read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    if (doc.value("format", "") != "opfcert-verification") throw FormatError(path + " is not a verification report");
    std::vector<Certificate> certs;
    for (const auto& j : doc.at("certificates")) certs.push_back(certificate_from_json(j));
    if (doc.contains("timing"))
        for (std::size_t k = 0; k < certs.size() && k < doc["timing"].size(); ++k)
            certs[k].seconds = doc["timing"][k].value("seconds", 0.0);
    return certs;
}

void write_sweep(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "delta,constraint,nu,percent\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.2f,%s,%.12g,%.6f\n", r.delta, r.id.label().c_str(), r.nu, r.percent);
        out << buf;
    }
}

}  // namespace opfcert::verify
