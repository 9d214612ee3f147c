#include "opfcert/nn/autodiff.hpp"

#include <cassert>
#include <cmath>

namespace opfcert::nn::ad {

using Eigen::Index;
using Eigen::MatrixXd;

Var Tape::constant(MatrixXd value) { return record(std::move(value), false, nullptr); }

Var Tape::variable(MatrixXd value) {
    nodes_.push_back({std::move(value), MatrixXd(), true, nullptr});
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(MatrixXd value, bool requires_grad, Backward back) {
    nodes_.push_back({std::move(value), MatrixXd(), requires_grad, requires_grad ? std::move(back) : nullptr});
    return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(const Var& v, const MatrixXd& g) {
    auto& node = nodes_[static_cast<std::size_t>(v.id())];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0)
        node.grad = g;
    else
        node.grad += g;
}

void Tape::backward(const Var& out) {
    assert(out.tape() == this && out.rows() == 1 && out.cols() == 1);
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!out.requires_grad()) return;
    nodes_[static_cast<std::size_t>(out.id())].grad = MatrixXd::Ones(1, 1);
    for (int id = out.id(); id >= 0; --id) {
        auto& node = nodes_[static_cast<std::size_t>(id)];
        if (node.back && node.grad.size() != 0) node.back(*this, node.grad);
    }
}

MatrixXd Tape::grad(const Var& v) const {
    const auto& node = nodes_[static_cast<std::size_t>(v.id())];
    if (node.grad.size() == 0) return MatrixXd::Zero(node.value.rows(), node.value.cols());
    return node.grad;
}

namespace {

bool any_grad(const Var& a) { return a.requires_grad(); }
bool any_grad(const Var& a, const Var& b) { return a.requires_grad() || b.requires_grad(); }

Tape& tape_of(const Var& a, const Var& b) {
    assert(a.tape() == b.tape());
    (void)b;
    return *a.tape();
}

}  // namespace

Var add(const Var& a, const Var& b) {
    return tape_of(a, b).record(a.value() + b.value(), any_grad(a, b), [a, b](Tape& t, const MatrixXd& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var sub(const Var& a, const Var& b) {
    return tape_of(a, b).record(a.value() - b.value(), any_grad(a, b), [a, b](Tape& t, const MatrixXd& g) {
        t.accumulate(a, g);
        t.accumulate(b, -g);
    });
}

Var mul(const Var& a, const Var& b) {
    return tape_of(a, b).record(a.value().cwiseProduct(b.value()), any_grad(a, b),
                                [a, b](Tape& t, const MatrixXd& g) {
                                    if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
                                    if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
                                });
}

Var div(const Var& a, const Var& b) {
    return tape_of(a, b).record(a.value().cwiseQuotient(b.value()), any_grad(a, b),
                                [a, b](Tape& t, const MatrixXd& g) {
                                    const MatrixXd gb = g.cwiseQuotient(b.value());
                                    if (a.requires_grad()) t.accumulate(a, gb);
                                    if (b.requires_grad())
                                        t.accumulate(b, -gb.cwiseProduct(a.value()).cwiseQuotient(b.value()));
                                });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
    return a.tape()->record(a.value() * s, any_grad(a), [a, s](Tape& t, const MatrixXd& g) { t.accumulate(a, g * s); });
}

Var add_scalar(const Var& a, double s) {
    return a.tape()->record(a.value().array() + s, any_grad(a), [a](Tape& t, const MatrixXd& g) { t.accumulate(a, g); });
}

Var relu(const Var& a) {
    return a.tape()->record(a.value().cwiseMax(0.0), any_grad(a), [a](Tape& t, const MatrixXd& g) {
        t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
    });
}

Var abs(const Var& a) {
    return a.tape()->record(a.value().cwiseAbs(), any_grad(a), [a](Tape& t, const MatrixXd& g) {
        const auto& x = a.value().array();
        t.accumulate(a, (x > 0.0).select(g, (x < 0.0).select(-g, 0.0)));
    });
}

Var square(const Var& a) {
    return a.tape()->record(a.value().cwiseAbs2(), any_grad(a),
                            [a](Tape& t, const MatrixXd& g) { t.accumulate(a, 2.0 * g.cwiseProduct(a.value())); });
}

Var sqrt(const Var& a) {
    MatrixXd r = a.value().cwiseMax(0.0).cwiseSqrt();
    return a.tape()->record(r, any_grad(a), [a, r](Tape& t, const MatrixXd& g) {
        t.accumulate(a, (r.array() > 0.0).select(0.5 * g.array() / r.array(), 0.0).matrix());
    });
}

Var max(const Var& a, const Var& b) {
    const MatrixXd mask = (a.value().array() >= b.value().array()).cast<double>();
    return where(mask, a, b);
}

Var min(const Var& a, const Var& b) {
    const MatrixXd mask = (a.value().array() <= b.value().array()).cast<double>();
    return where(mask, a, b);
}

Var where(const MatrixXd& mask, const Var& a, const Var& b) {
    MatrixXd out = mask.cwiseProduct(a.value()) + (1.0 - mask.array()).matrix().cwiseProduct(b.value());
    return tape_of(a, b).record(std::move(out), any_grad(a, b), [a, b, mask](Tape& t, const MatrixXd& g) {
        if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(mask));
        if (b.requires_grad()) t.accumulate(b, g - g.cwiseProduct(mask));
    });
}

Var matmul(const Var& a, const Var& b) {
    assert(a.cols() == b.rows());
    return tape_of(a, b).record(a.value() * b.value(), any_grad(a, b), [a, b](Tape& t, const MatrixXd& g) {
        if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
        if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
    });
}

Var transpose(const Var& a) {
    return a.tape()->record(a.value().transpose(), any_grad(a),
                            [a](Tape& t, const MatrixXd& g) { t.accumulate(a, g.transpose()); });
}

Var add_col(const Var& a, const Var& c) {
    assert(c.cols() == 1 && c.rows() == a.rows());
    MatrixXd out = a.value().colwise() + c.value().col(0);
    return tape_of(a, c).record(std::move(out), any_grad(a, c), [a, c](Tape& t, const MatrixXd& g) {
        t.accumulate(a, g);
        if (c.requires_grad()) t.accumulate(c, g.rowwise().sum());
    });
}

namespace {

// Column vector view of an n-entry vector node, whichever orientation it was given in.
Eigen::VectorXd as_column(const MatrixXd& m) { return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()); }

MatrixXd shaped_like(const Eigen::VectorXd& v, const MatrixXd& like) {
    return Eigen::Map<const MatrixXd>(v.data(), like.rows(), like.cols());
}

}  // namespace

Var scale_cols(const Var& a, const Var& s) {
    assert(s.value().size() == a.cols());
    const Eigen::VectorXd sv = as_column(s.value());
    MatrixXd out = a.value() * sv.asDiagonal();
    return tape_of(a, s).record(std::move(out), any_grad(a, s), [a, s, sv](Tape& t, const MatrixXd& g) {
        if (a.requires_grad()) t.accumulate(a, g * sv.asDiagonal());
        if (s.requires_grad()) {
            const Eigen::VectorXd gs = g.cwiseProduct(a.value()).colwise().sum().transpose();
            t.accumulate(s, shaped_like(gs, s.value()));
        }
    });
}

Var scale_rows(const Var& a, const Var& s) {
    assert(s.value().size() == a.rows());
    const Eigen::VectorXd sv = as_column(s.value());
    MatrixXd out = sv.asDiagonal() * a.value();
    return tape_of(a, s).record(std::move(out), any_grad(a, s), [a, s, sv](Tape& t, const MatrixXd& g) {
        if (a.requires_grad()) t.accumulate(a, sv.asDiagonal() * g);
        if (s.requires_grad()) {
            const Eigen::VectorXd gs = g.cwiseProduct(a.value()).rowwise().sum();
            t.accumulate(s, shaped_like(gs, s.value()));
        }
    });
}

Var sum(const Var& a) {
    MatrixXd out(1, 1);
    out(0, 0) = a.value().sum();
    return a.tape()->record(std::move(out), any_grad(a), [a](Tape& t, const MatrixXd& g) {
        t.accumulate(a, MatrixXd::Constant(a.rows(), a.cols(), g(0, 0)));
    });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var row_sums(const Var& a) {
    return a.tape()->record(a.value().rowwise().sum(), any_grad(a), [a](Tape& t, const MatrixXd& g) {
        t.accumulate(a, g.col(0).replicate(1, a.cols()));
    });
}

Var rows(const Var& a, Index start, Index count) {
    assert(start >= 0 && start + count <= a.rows());
    return a.tape()->record(a.value().middleRows(start, count), any_grad(a),
                            [a, start, count](Tape& t, const MatrixXd& g) {
                                MatrixXd full = MatrixXd::Zero(a.rows(), a.cols());
                                full.middleRows(start, count) = g;
                                t.accumulate(a, full);
                            });
}

Var gather_rows(const Var& a, const std::vector<Index>& index) {
    MatrixXd out(static_cast<Index>(index.size()), a.cols());
    for (std::size_t k = 0; k < index.size(); ++k) out.row(static_cast<Index>(k)) = a.value().row(index[k]);
    return a.tape()->record(std::move(out), any_grad(a), [a, index](Tape& t, const MatrixXd& g) {
        MatrixXd full = MatrixXd::Zero(a.rows(), a.cols());
        for (std::size_t k = 0; k < index.size(); ++k) full.row(index[k]) += g.row(static_cast<Index>(k));
        t.accumulate(a, full);
    });
}

Var vstack(const std::vector<Var>& parts) {
    assert(!parts.empty());
    Index total = 0;
    bool grad = false;
    for (const auto& p : parts) {
        assert(p.cols() == parts.front().cols());
        total += p.rows();
        grad = grad || p.requires_grad();
    }
    MatrixXd out(total, parts.front().cols());
    Index at = 0;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    return parts.front().tape()->record(std::move(out), grad, [parts](Tape& t, const MatrixXd& g) {
        Index off = 0;
        for (const auto& p : parts) {
            if (p.requires_grad()) t.accumulate(p, g.middleRows(off, p.rows()));
            off += p.rows();
        }
    });
}

}  // namespace opfcert::nn::ad
