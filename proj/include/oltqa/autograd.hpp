#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// Every value is an Eigen matrix. Vectors are 1 x d rows. A Var owns a shared
// node; operations record their parents and a closure that pushes the output
// gradient back into the parents. backward() walks the graph in reverse
// topological order starting from a 1 x 1 root.
//
// detach() is the stop-gradient operator: the result carries the same value
// but has no parents, so nothing upstream of it can receive gradient.

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

namespace oltqa::ag {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void accumulate(const Matrix& g);
};

class Var {
public:
    Var() = default;
    explicit Var(Matrix value, bool requires_grad = false);

    const Matrix& value() const { return node_->value; }
    Matrix& mutable_value() { return node_->value; }
    /// Zero matrix of the right shape when nothing has been accumulated.
    Matrix grad() const;
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }
    void zero_grad();

    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    double scalar() const { return node_->value(0, 0); }

    const std::shared_ptr<Node>& node() const { return node_; }

    static Var make(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

private:
    std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
Var parameter(Matrix value);
Var scalar(double v);

/// Runs backpropagation from a 1 x 1 root, accumulating into every reachable node that
/// requires a gradient.
void backward(const Var& root);

Var detach(const Var& a);

Var matmul(const Var& a, const Var& b);
/// a * b^T without materializing the transpose in the graph.
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Adds a constant matrix of the same shape (used for attention masks).
Var add_constant(const Var& a, const Matrix& c);
/// Adds a 1 x cols row to every row of a.
Var add_row(const Var& a, const Var& row);

Var tanh(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);

/// max(a, floor) elementwise; no gradient flows through clamped entries.
Var clamp_min(const Var& a, double floor);

Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);

Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);

/// Gathers rows of a table (embedding lookup).
Var gather_rows(const Var& table, const std::vector<int>& ids);
/// Picks element (r, ids[r]) from each row; returns ids.size() x 1.
Var pick(const Var& a, const std::vector<int>& ids);

Var sum(const Var& a);
Var mean(const Var& a);
/// Column-wise mean over rows, returns 1 x cols.
Var mean_rows(const Var& a);
/// Mean over the rows flagged true only.
Var masked_mean_rows(const Var& a, const std::vector<bool>& keep);

Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias, double eps = 1e-5);
Var l2_normalize_rows(const Var& a, double eps = 1e-12);

}  // namespace oltqa::ag
