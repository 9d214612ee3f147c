#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace opfcert::nn::ad {

class Tape;

/// Handle to a matrix-valued node recorded on a Tape. Cheap to copy; valid while the tape
/// lives.
class Var {
  public:
    Var() = default;

    const Eigen::MatrixXd& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    /// Scalar value of a 1x1 node.
    double scalar() const { return value()(0, 0); }
    bool requires_grad() const;
    Tape* tape() const { return tape_; }
    int id() const { return id_; }

  private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Reverse-mode tape over dense matrices. Nodes that do not depend on a variable carry no
/// backward closure, so evaluating on constants costs one matrix operation per op.
class Tape {
  public:
    using Backward = std::function<void(Tape&, const Eigen::MatrixXd& grad)>;

    Var constant(Eigen::MatrixXd value);
    /// Leaf whose gradient is collected by backward().
    Var variable(Eigen::MatrixXd value);
    /// Records an op result. `back` receives the output gradient and must call accumulate()
    /// for every input that requires a gradient. It is dropped when requires_grad is false.
    Var record(Eigen::MatrixXd value, bool requires_grad, Backward back);

    /// Propagates d(out)/d(node) for a 1x1 out to every node recorded before it.
    void backward(const Var& out);
    /// Gradient from the last backward(); zeros for nodes it did not reach.
    Eigen::MatrixXd grad(const Var& v) const;
    void accumulate(const Var& v, const Eigen::MatrixXd& g);

    const Eigen::MatrixXd& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Eigen::MatrixXd value;
        Eigen::MatrixXd grad;
        bool requires_grad = false;
        Backward back;
    };
    // deque keeps value references stable while ops append.
    std::deque<Node> nodes_;
};

inline const Eigen::MatrixXd& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

// Elementwise ops require equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);
/// sqrt with gradient 0 where the argument is <= 0.
Var sqrt(const Var& a);
/// Elementwise max/min; ties send the gradient to a.
Var max(const Var& a, const Var& b);
Var min(const Var& a, const Var& b);
/// mask ? a : b elementwise, with mask entries 0 or 1.
Var where(const Eigen::MatrixXd& mask, const Var& a, const Var& b);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// a (n x m) plus column c (n x 1) added to every column.
Var add_col(const Var& a, const Var& c);
/// Column j of a times s(j); s has a.cols() entries.
Var scale_cols(const Var& a, const Var& s);
/// Row i of a times s(i); s has a.rows() entries.
Var scale_rows(const Var& a, const Var& s);

Var sum(const Var& a);
Var mean(const Var& a);
/// Column vector of row sums.
Var row_sums(const Var& a);
Var rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& a, const std::vector<Eigen::Index>& index);
Var vstack(const std::vector<Var>& parts);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator-(const Var& a) { return neg(a); }

}  // namespace opfcert::nn::ad
