#include "opfcert/opt/opf.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "opfcert/common/errors.hpp"
#include "opfcert/common/parallel.hpp"

namespace opfcert::opt {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Evaluation {
    VectorXd h;   // equalities: P balance, Q balance, slack angle
    VectorXd g;   // inequalities g <= 0
    MatrixXd jh;
    MatrixXd jg;
};

// Constraint set of one scenario over x = [v^r; v^i; p_g; q_g]. Inequalities, in order:
// p_min - p_g, p_g - p_max, q_min - q_g, q_g - q_max, v_min^2 - |v|^2, |v|^2 - v_max^2,
// |i_f|^2 - limit^2, |i_t|^2 - limit^2. Every constraint is at most quadratic in v and
// linear in the generator variables, so constraint Hessians are constant.
class OpfProblem {
  public:
    OpfProblem(const grid::GridModel& model, const grid::AdmittanceSet& adm, const acpf::LoadScenario& s)
        : nb_(static_cast<Index>(model.num_buses())),
          ng_(static_cast<Index>(model.num_generators())),
          nl_(static_cast<Index>(model.num_branches())),
          y_(adm.y_bus_rect),
          yf_(adm.y_f_rect),
          yt_(adm.y_t_rect),
          pd_(acpf::bus_demand_p(model, s)),
          qd_(acpf::bus_demand_q(model, s)),
          slack_(static_cast<Index>(model.slack_index())) {
        for (std::size_t g = 0; g < model.num_generators(); ++g) {
            const auto& gen = model.generators()[g];
            gen_bus_.push_back(static_cast<Index>(model.gen_bus(g)));
            p_min_.push_back(gen.p_min);
            p_max_.push_back(gen.p_max);
            q_min_.push_back(gen.q_min);
            q_max_.push_back(gen.q_max);
        }
        vmin2_.resize(nb_);
        vmax2_.resize(nb_);
        for (Index n = 0; n < nb_; ++n) {
            const auto& bus = model.buses()[static_cast<std::size_t>(n)];
            vmin2_(n) = bus.v_min * bus.v_min;
            vmax2_(n) = bus.v_max * bus.v_max;
        }
        lim2_.resize(nl_);
        for (Index l = 0; l < nl_; ++l) {
            const double lim = model.branches()[static_cast<std::size_t>(l)].flow_limit;
            lim2_(l) = lim * lim;
        }
    }

    Index num_buses() const { return nb_; }
    Index num_generators() const { return ng_; }
    Index num_vars() const { return 2 * nb_ + 2 * ng_; }
    Index num_eq() const { return 2 * nb_ + 1; }
    Index num_ineq() const { return 4 * ng_ + 2 * nb_ + 2 * nl_; }

    void evaluate(const VectorXd& x, Evaluation& e, bool with_jacobian) const {
        const auto v = x.head(2 * nb_);
        const auto vr = v.head(nb_);
        const auto vi = v.tail(nb_);
        const VectorXd i = y_ * v;
        const auto ir = i.head(nb_);
        const auto ii = i.tail(nb_);

        e.h.resize(num_eq());
        e.h.head(nb_) = vr.cwiseProduct(ir) + vi.cwiseProduct(ii) + pd_;
        e.h.segment(nb_, nb_) = vi.cwiseProduct(ir) - vr.cwiseProduct(ii) + qd_;
        for (Index g = 0; g < ng_; ++g) {
            e.h(gen_bus_[g]) -= x(pg(g));
            e.h(nb_ + gen_bus_[g]) -= x(qg(g));
        }
        e.h(2 * nb_) = vi(slack_);

        const VectorXd fl = yf_ * v;
        const VectorXd tl = yt_ * v;
        e.g.resize(num_ineq());
        for (Index g = 0; g < ng_; ++g) {
            e.g(g) = p_min_[g] - x(pg(g));
            e.g(ng_ + g) = x(pg(g)) - p_max_[g];
            e.g(2 * ng_ + g) = q_min_[g] - x(qg(g));
            e.g(3 * ng_ + g) = x(qg(g)) - q_max_[g];
        }
        const VectorXd vm2 = vr.array().square() + vi.array().square();
        e.g.segment(vmin_row(), nb_) = vmin2_ - vm2;
        e.g.segment(vmax_row(), nb_) = vm2 - vmax2_;
        for (Index l = 0; l < nl_; ++l) {
            e.g(from_row() + l) = fl(l) * fl(l) + fl(nl_ + l) * fl(nl_ + l) - lim2_(l);
            e.g(to_row() + l) = tl(l) * tl(l) + tl(nl_ + l) * tl(nl_ + l) - lim2_(l);
        }
        if (!with_jacobian) return;

        e.jh.setZero(num_eq(), num_vars());
        auto jp = e.jh.block(0, 0, nb_, 2 * nb_);
        auto jq = e.jh.block(nb_, 0, nb_, 2 * nb_);
        jp = vr.asDiagonal() * y_.topRows(nb_) + vi.asDiagonal() * y_.bottomRows(nb_);
        jq = vi.asDiagonal() * y_.topRows(nb_) - vr.asDiagonal() * y_.bottomRows(nb_);
        for (Index n = 0; n < nb_; ++n) {
            jp(n, n) += ir(n);
            jp(n, nb_ + n) += ii(n);
            jq(n, n) -= ii(n);
            jq(n, nb_ + n) += ir(n);
        }
        for (Index g = 0; g < ng_; ++g) {
            e.jh(gen_bus_[g], pg(g)) = -1.0;
            e.jh(nb_ + gen_bus_[g], qg(g)) = -1.0;
        }
        e.jh(2 * nb_, nb_ + slack_) = 1.0;

        e.jg.setZero(num_ineq(), num_vars());
        for (Index g = 0; g < ng_; ++g) {
            e.jg(g, pg(g)) = -1.0;
            e.jg(ng_ + g, pg(g)) = 1.0;
            e.jg(2 * ng_ + g, qg(g)) = -1.0;
            e.jg(3 * ng_ + g, qg(g)) = 1.0;
        }
        for (Index n = 0; n < nb_; ++n) {
            e.jg(vmin_row() + n, n) = -2.0 * vr(n);
            e.jg(vmin_row() + n, nb_ + n) = -2.0 * vi(n);
            e.jg(vmax_row() + n, n) = 2.0 * vr(n);
            e.jg(vmax_row() + n, nb_ + n) = 2.0 * vi(n);
        }
        for (Index l = 0; l < nl_; ++l) {
            e.jg.row(from_row() + l).head(2 * nb_) = 2.0 * (fl(l) * yf_.row(l) + fl(nl_ + l) * yf_.row(nl_ + l));
            e.jg.row(to_row() + l).head(2 * nb_) = 2.0 * (tl(l) * yt_.row(l) + tl(nl_ + l) * yt_.row(nl_ + l));
        }
    }

    // Sum_k wh_k * Hess(h_k) + Sum_j wg_j * Hess(g_j).
    MatrixXd constraint_hessian(const VectorXd& wh, const VectorXd& wg) const {
        MatrixXd hess = MatrixXd::Zero(num_vars(), num_vars());
        auto hv = hess.topLeftCorner(2 * nb_, 2 * nb_);
        const auto wp = wh.head(nb_);
        const auto wq = wh.segment(nb_, nb_);

        // sum w p = v^T W Y v with W = diag(w, w)
        MatrixXd a(2 * nb_, 2 * nb_);
        a.topRows(nb_) = wp.asDiagonal() * y_.topRows(nb_);
        a.bottomRows(nb_) = wp.asDiagonal() * y_.bottomRows(nb_);
        hv += a + a.transpose();
        // sum w q = v^T S^T W Y v with S v = [v^i; -v^r]
        a.topRows(nb_) = -(wq.asDiagonal() * y_.bottomRows(nb_));
        a.bottomRows(nb_) = wq.asDiagonal() * y_.topRows(nb_);
        hv += a + a.transpose();

        const VectorXd wv = wg.segment(vmax_row(), nb_) - wg.segment(vmin_row(), nb_);
        hv.diagonal().head(nb_) += 2.0 * wv;
        hv.diagonal().tail(nb_) += 2.0 * wv;

        VectorXd wf(2 * nl_), wt(2 * nl_);
        wf << wg.segment(from_row(), nl_), wg.segment(from_row(), nl_);
        wt << wg.segment(to_row(), nl_), wg.segment(to_row(), nl_);
        hv += 2.0 * (yf_.transpose() * wf.asDiagonal() * yf_ + yt_.transpose() * wt.asDiagonal() * yt_);
        return hess;
    }

  private:
    Index pg(Index g) const { return 2 * nb_ + g; }
    Index qg(Index g) const { return 2 * nb_ + ng_ + g; }
    Index vmin_row() const { return 4 * ng_; }
    Index vmax_row() const { return 4 * ng_ + nb_; }
    Index from_row() const { return 4 * ng_ + 2 * nb_; }
    Index to_row() const { return 4 * ng_ + 2 * nb_ + nl_; }

    Index nb_, ng_, nl_;
    const MatrixXd& y_;
    const MatrixXd& yf_;
    const MatrixXd& yt_;
    VectorXd pd_, qd_;
    Index slack_;
    std::vector<Index> gen_bus_;
    std::vector<double> p_min_, p_max_, q_min_, q_max_;
    VectorXd vmin2_, vmax2_, lim2_;
};

// f(x) = linear^T x + quad * ||x - target||^2
struct Objective {
    VectorXd linear;
    double quad = 0.0;
    VectorXd target;

    double value(const VectorXd& x) const {
        double f = linear.dot(x);
        if (quad != 0.0) f += quad * (x - target).squaredNorm();
        return f;
    }
    VectorXd gradient(const VectorXd& x) const {
        VectorXd grad = linear;
        if (quad != 0.0) grad += 2.0 * quad * (x - target);
        return grad;
    }
    void add_hessian(MatrixXd& h) const {
        if (quad != 0.0) h.diagonal().array() += 2.0 * quad;
    }
};

struct Multipliers {
    VectorXd lambda;
    VectorXd mu;
};

struct NlpOutcome {
    VectorXd x;
    double kkt = kInf;
    double feasibility = kInf;
    int newton_steps = 0;
    int outer = 0;
    bool converged = false;
};

// PHR augmented Lagrangian
// L(x) = f + lambda^T h + rho/2 |h|^2 + 1/(2 rho) sum(max(0, mu + rho g)^2 - mu^2).
double augmented_value(const OpfProblem& prob, const Objective& obj, const VectorXd& x, const Multipliers& m,
                       double rho, Evaluation& e) {
    prob.evaluate(x, e, false);
    const VectorXd shifted = (m.mu + rho * e.g).cwiseMax(0.0);
    return obj.value(x) + m.lambda.dot(e.h) + 0.5 * rho * e.h.squaredNorm() +
           (shifted.squaredNorm() - m.mu.squaredNorm()) / (2.0 * rho);
}

VectorXd augmented_gradient(const OpfProblem& prob, const Objective& obj, const VectorXd& x, const Multipliers& m,
                            double rho, Evaluation& e) {
    prob.evaluate(x, e, true);
    const VectorXd lh = m.lambda + rho * e.h;
    const VectorXd lg = (m.mu + rho * e.g).cwiseMax(0.0);
    return obj.gradient(x) + e.jh.transpose() * lh + e.jg.transpose() * lg;
}

// Least-squares multipliers on the constraints active at x, used for warm starts. Nearly
// active constraints whose multiplier comes out negative leave the active set until all
// remaining ones are non-negative.
Multipliers estimate_multipliers(const OpfProblem& prob, const Objective& obj, const VectorXd& x) {
    Evaluation e;
    prob.evaluate(x, e, true);
    std::vector<Index> active;
    for (Index j = 0; j < e.g.size(); ++j)
        if (e.g(j) >= -1e-4) active.push_back(j);
    const Index neq = prob.num_eq();
    VectorXd sol;
    while (true) {
        MatrixXd m(prob.num_vars(), neq + static_cast<Index>(active.size()));
        m.leftCols(neq) = e.jh.transpose();
        for (std::size_t k = 0; k < active.size(); ++k)
            m.col(neq + static_cast<Index>(k)) = e.jg.row(active[k]).transpose();
        sol = m.colPivHouseholderQr().solve(-obj.gradient(x));
        std::vector<Index> kept;
        for (std::size_t k = 0; k < active.size(); ++k)
            if (sol(neq + static_cast<Index>(k)) >= 0.0) kept.push_back(active[k]);
        if (kept.size() == active.size()) break;
        active = std::move(kept);
    }
    Multipliers out{sol.head(neq), VectorXd::Zero(prob.num_ineq())};
    for (std::size_t k = 0; k < active.size(); ++k) out.mu(active[k]) = sol(neq + static_cast<Index>(k));
    if (!out.lambda.allFinite() || !out.mu.allFinite()) {
        out.lambda.setZero();
        out.mu.setZero();
    }
    return out;
}

// Levenberg-regularized Newton direction for a possibly indefinite Hessian.
VectorXd newton_direction(const MatrixXd& hess, const VectorXd& grad) {
    const double scale = std::max(1.0, hess.diagonal().cwiseAbs().maxCoeff());
    double tau = 0.0;
    Eigen::LLT<MatrixXd> llt;
    for (int attempt = 0; attempt < 40; ++attempt) {
        MatrixXd reg = hess;
        reg.diagonal().array() += tau;
        llt.compute(reg);
        if (llt.info() == Eigen::Success) {
            VectorXd d = llt.solve(-grad);
            if (d.allFinite()) return d;
        }
        tau = tau == 0.0 ? 1e-10 * scale : tau * 10.0;
    }
    return -grad;
}

NlpOutcome solve_nlp(const OpfProblem& prob, const Objective& obj, VectorXd x, bool warm,
                     const SolverOptions& options) {
    Multipliers m{VectorXd::Zero(prob.num_eq()), VectorXd::Zero(prob.num_ineq())};
    if (warm) m = estimate_multipliers(prob, obj, x);

    NlpOutcome out;
    double best = kInf;
    Evaluation e, trial;
    // Feasibility and KKT residual of (x, m); e holds the evaluation at x afterwards.
    auto measure = [&]() {
        prob.evaluate(x, e, true);
        const double feas = std::max(e.h.lpNorm<Eigen::Infinity>(), std::max(0.0, e.g.maxCoeff()));
        const VectorXd stationarity = obj.gradient(x) + e.jh.transpose() * m.lambda + e.jg.transpose() * m.mu;
        const double kkt =
            std::max(stationarity.lpNorm<Eigen::Infinity>(), m.mu.cwiseProduct(e.g).lpNorm<Eigen::Infinity>());
        if (!std::isfinite(feas) || !std::isfinite(kkt)) throw NoConvergence(best);
        best = std::min(best, std::max(feas, kkt));
        out.x = x;
        out.feasibility = feas;
        out.kkt = kkt;
        out.converged = feas <= options.feasibility_tolerance && kkt <= options.kkt_tolerance;
        return out.converged;
    };
    // A warm start at a KKT point is returned as is, before any multiplier update.
    if (warm && measure()) return out;

    double rho = options.initial_penalty;
    for (int outer = 1; outer <= options.max_outer_iterations; ++outer) {
        out.outer = outer;
        const double omega = std::max(options.min_inner_tolerance, 1.0 / rho);
        for (int inner = 0; inner < options.max_inner_iterations; ++inner) {
            const VectorXd grad = augmented_gradient(prob, obj, x, m, rho, e);
            const double gnorm = grad.lpNorm<Eigen::Infinity>();
            if (!std::isfinite(gnorm)) throw NoConvergence(best);
            if (gnorm <= omega) break;

            const VectorXd lh = m.lambda + rho * e.h;
            const VectorXd lg = (m.mu + rho * e.g).cwiseMax(0.0);
            MatrixXd hess = prob.constraint_hessian(lh, lg);
            obj.add_hessian(hess);
            hess.noalias() += rho * e.jh.transpose() * e.jh;
            std::vector<Index> active;
            for (Index j = 0; j < lg.size(); ++j)
                if (lg(j) > 0.0) active.push_back(j);
            if (!active.empty()) {
                MatrixXd ja(static_cast<Index>(active.size()), prob.num_vars());
                for (std::size_t k = 0; k < active.size(); ++k) ja.row(static_cast<Index>(k)) = e.jg.row(active[k]);
                hess.noalias() += rho * ja.transpose() * ja;
            }
            const VectorXd d = newton_direction(hess, grad);

            const double phi0 = augmented_value(prob, obj, x, m, rho, trial);
            const double slope = grad.dot(d);
            bool accepted = false;
            if (slope < 0.0) {
                double alpha = 1.0;
                for (int k = 0; k < 50; ++k, alpha *= 0.5) {
                    const double phi = augmented_value(prob, obj, x + alpha * d, m, rho, trial);
                    if (std::isfinite(phi) && phi <= phi0 + 1e-4 * alpha * slope) {
                        x += alpha * d;
                        accepted = true;
                        break;
                    }
                }
            }
            if (!accepted) {
                // Near a solution the decrease can drop below round-off in L; fall back to
                // accepting a full step that reduces the gradient.
                const VectorXd next = x + d;
                const VectorXd next_grad = augmented_gradient(prob, obj, next, m, rho, trial);
                if (next_grad.allFinite() && next_grad.lpNorm<Eigen::Infinity>() < 0.9 * gnorm) {
                    x = next;
                    accepted = true;
                }
            }
            if (!accepted) break;
            ++out.newton_steps;
        }

        prob.evaluate(x, e, true);
        m.lambda += rho * e.h;
        m.mu = (m.mu + rho * e.g).cwiseMax(0.0);
        if (measure()) return out;
        rho *= options.penalty_growth;
    }
    throw NoConvergence(best);
}

OPFSolution make_solution(const grid::GridModel& model, const NlpOutcome& r) {
    const auto p = OpfPoint::from_vector(r.x, model.num_buses(), model.num_generators());
    OPFSolution sol;
    sol.v = p.v;
    sol.p_g = p.p_g;
    sol.q_g = p.q_g;
    for (std::size_t g = 0; g < model.num_generators(); ++g)
        sol.objective += model.generators()[g].cost * sol.p_g(static_cast<Index>(g));
    sol.kkt_residual = r.kkt;
    sol.feasibility = r.feasibility;
    sol.iterations = r.newton_steps;
    sol.outer_iterations = r.outer;
    sol.converged = r.converged;
    return sol;
}

void check_point(const grid::GridModel& model, const OpfPoint& p) {
    if (p.v.v.size() != 2 * static_cast<Index>(model.num_buses()) ||
        p.p_g.size() != static_cast<Index>(model.num_generators()) ||
        p.q_g.size() != static_cast<Index>(model.num_generators()))
        throw ValidationError("OPF point dimensions do not match the network");
}

}  // namespace

VectorXd OpfPoint::to_vector() const {
    VectorXd x(v.v.size() + p_g.size() + q_g.size());
    x << v.v, p_g, q_g;
    return x;
}

OpfPoint OpfPoint::from_vector(const VectorXd& x, std::size_t num_buses, std::size_t num_generators) {
    const auto nb = static_cast<Index>(num_buses);
    const auto ng = static_cast<Index>(num_generators);
    return {acpf::VoltageState(x.head(2 * nb)), x.segment(2 * nb, ng), x.segment(2 * nb + ng, ng)};
}

OpfPoint point_from_voltages(const grid::GridModel& model, const grid::AdmittanceSet& adm,
                             const acpf::LoadScenario& s, const acpf::VoltageState& v) {
    auto dispatch = acpf::generator_dispatch(model, adm, v, s);
    return {v, std::move(dispatch.p_g), std::move(dispatch.q_g)};
}

OpfPoint cold_start_point(const grid::GridModel& model) {
    const auto nb = static_cast<Index>(model.num_buses());
    const auto ng = static_cast<Index>(model.num_generators());
    VectorXd mag(nb);
    for (Index n = 0; n < nb; ++n) {
        const auto& bus = model.buses()[static_cast<std::size_t>(n)];
        double target = 1.0;
        if (auto g = model.gen_at_bus(static_cast<std::size_t>(n))) target = model.generators()[*g].v_set;
        mag(n) = std::clamp(target, bus.v_min, bus.v_max);
    }
    OpfPoint p{acpf::VoltageState::from_polar(mag, VectorXd::Zero(nb)), VectorXd(ng), VectorXd(ng)};
    for (Index g = 0; g < ng; ++g) {
        const auto& gen = model.generators()[static_cast<std::size_t>(g)];
        p.p_g(g) = 0.5 * (gen.p_min + gen.p_max);
        p.q_g(g) = 0.5 * (gen.q_min + gen.q_max);
    }
    return p;
}

OPFSolution solve_opf(const grid::GridModel& model, const grid::AdmittanceSet& adm, const acpf::LoadScenario& s,
                      const std::optional<OpfPoint>& init, const SolverOptions& options) {
    if (init) check_point(model, *init);
    const OpfProblem prob(model, adm, s);
    double scale = 0.0;
    for (const auto& g : model.generators()) scale = std::max(scale, std::abs(g.cost));
    if (scale == 0.0) scale = 1.0;
    Objective obj{VectorXd::Zero(prob.num_vars()), 0.0, {}};
    for (std::size_t g = 0; g < model.num_generators(); ++g)
        obj.linear(2 * prob.num_buses() + static_cast<Index>(g)) = model.generators()[g].cost / scale;
    const OpfPoint start = init ? *init : cold_start_point(model);
    return make_solution(model, solve_nlp(prob, obj, start.to_vector(), init.has_value(), options));
}

Restoration restore_feasible(const grid::GridModel& model, const grid::AdmittanceSet& adm,
                             const acpf::LoadScenario& s, const OpfPoint& prediction, const SolverOptions& options) {
    check_point(model, prediction);
    const OpfProblem prob(model, adm, s);
    const VectorXd target = prediction.to_vector();
    const Objective obj{VectorXd::Zero(prob.num_vars()), 1.0, target};
    Restoration r;
    r.solution = make_solution(model, solve_nlp(prob, obj, target, true, options));
    r.distance_v = (r.solution.v.v - prediction.v.v).squaredNorm();
    r.distance_pg = (r.solution.p_g - prediction.p_g).squaredNorm();
    r.distance_qg = (r.solution.q_g - prediction.q_g).squaredNorm();
    return r;
}

namespace {

double change_pct(double base, double value) { return base == 0.0 ? 0.0 : 100.0 * (value - base) / std::abs(base); }

}  // namespace

double WarmStartRow::cost_change_pct() const { return change_pct(cold_objective, warm_objective); }
double WarmStartRow::iteration_change_pct() const { return change_pct(cold_iterations, warm_iterations); }
double WarmStartRow::time_change_pct() const { return change_pct(cold_ms, warm_ms); }

WarmStartReport warm_start_report(const grid::GridModel& model, const grid::AdmittanceSet& adm,
                                  const std::vector<acpf::LoadScenario>& scenarios, const Predictor& predictor,
                                  const SolverOptions& options, unsigned workers) {
    using clock = std::chrono::steady_clock;
    WarmStartReport report;
    report.rows.resize(scenarios.size());
    parallel_for(scenarios.size(), workers, [&](std::size_t k) {
        WarmStartRow& row = report.rows[k];
        row.index = k;
        try {
            auto t0 = clock::now();
            const auto cold = solve_opf(model, adm, scenarios[k], std::nullopt, options);
            auto t1 = clock::now();
            const auto init = predictor(scenarios[k]);
            auto t2 = clock::now();
            const auto warm = solve_opf(model, adm, scenarios[k], init, options);
            auto t3 = clock::now();
            row.cold_iterations = cold.iterations;
            row.warm_iterations = warm.iterations;
            row.cold_outer = cold.outer_iterations;
            row.warm_outer = warm.outer_iterations;
            row.cold_objective = cold.objective;
            row.warm_objective = warm.objective;
            row.cold_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
            row.warm_ms = std::chrono::duration<double, std::milli>(t3 - t2).count();
            row.ok = true;
        } catch (const NumericalError& e) {
            row.error = e.what();
        }
    });

    std::vector<const WarmStartRow*> ok;
    for (const auto& row : report.rows)
        if (row.ok) ok.push_back(&row);
    auto& sum = report.summary;
    sum.scenarios = scenarios.size();
    sum.failed = scenarios.size() - ok.size();
    std::sort(ok.begin(), ok.end(), [](const WarmStartRow* a, const WarmStartRow* b) {
        return std::tie(a->warm_iterations, a->cold_iterations, a->index) <
               std::tie(b->warm_iterations, b->cold_iterations, b->index);
    });
    if (ok.size() >= 100) {
        ok = std::vector<const WarmStartRow*>(ok.begin() + 10, ok.end() - 10);
        sum.trimmed = 20;
    }
    sum.aggregated = ok.size();
    if (ok.empty()) return report;
    std::size_t matching = 0;
    for (const auto* row : ok) {
        sum.mean_cold_iterations += row->cold_iterations;
        sum.mean_warm_iterations += row->warm_iterations;
        sum.mean_iteration_change_pct += row->iteration_change_pct();
        sum.mean_cost_change_pct += row->cost_change_pct();
        sum.mean_time_change_pct += row->time_change_pct();
        if (std::abs(row->cost_change_pct()) <= 0.1) ++matching;
    }
    const double n = static_cast<double>(ok.size());
    sum.mean_cold_iterations /= n;
    sum.mean_warm_iterations /= n;
    sum.mean_iteration_change_pct /= n;
    sum.mean_cost_change_pct /= n;
    sum.mean_time_change_pct /= n;
    sum.matching_fraction = static_cast<double>(matching) / n;
    return report;
}

void write_csv(std::ostream& out, const WarmStartReport& report) {
    const auto flags = out.flags();
    const auto precision = out.precision(12);
    out << "index,status,cold_iterations,warm_iterations,cold_outer,warm_outer,cold_objective,warm_objective,"
           "cost_change_pct,iteration_change_pct,cold_ms,warm_ms,time_change_pct\n";
    for (const auto& r : report.rows) {
        out << r.index << ',' << (r.ok ? "ok" : "failed") << ',';
        if (!r.ok) {
            out << ",,,,,,,,,,\n";
            continue;
        }
        out << r.cold_iterations << ',' << r.warm_iterations << ',' << r.cold_outer << ',' << r.warm_outer << ','
            << r.cold_objective << ',' << r.warm_objective << ',' << r.cost_change_pct() << ','
            << r.iteration_change_pct() << ',' << r.cold_ms << ',' << r.warm_ms << ',' << r.time_change_pct()
            << '\n';
    }
    out.precision(precision);
    out.flags(flags);
}

nlohmann::json to_json(const WarmStartSummary& s) {
    return {{"scenarios", s.scenarios},
            {"failed", s.failed},
            {"trimmed", s.trimmed},
            {"aggregated", s.aggregated},
            {"mean_cold_iterations", s.mean_cold_iterations},
            {"mean_warm_iterations", s.mean_warm_iterations},
            {"mean_iteration_change_pct", s.mean_iteration_change_pct},
            {"mean_cost_change_pct", s.mean_cost_change_pct},
            {"mean_time_change_pct", s.mean_time_change_pct},
            {"matching_fraction", s.matching_fraction}};
}

}  // namespace opfcert::opt
