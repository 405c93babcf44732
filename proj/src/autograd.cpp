#include "oltqa/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "oltqa/errors.hpp"

namespace oltqa::ag {

void Node::accumulate(const Matrix& g)
{
    if (grad.size() == 0) {
        grad = g;
    } else {
        grad += g;
    }
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>())
{
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Matrix Var::grad() const
{
    if (node_->grad.size() == 0) {
        return Matrix::Zero(node_->value.rows(), node_->value.cols());
    }
    return node_->grad;
}

void Var::zero_grad()
{
    node_->grad.resize(0, 0);
}

Var Var::make(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backward_fn)
{
    Var out(std::move(value), false);
    for (const auto& p : parents) {
        if (p.requires_grad()) {
            out.node_->requires_grad = true;
        }
    }
    if (out.node_->requires_grad) {
        out.node_->parents.reserve(parents.size());
        for (auto& p : parents) {
            out.node_->parents.push_back(p.node_);
        }
        out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
}

Var constant(Matrix value)
{
    return Var(std::move(value), false);
}

Var parameter(Matrix value)
{
    return Var(std::move(value), true);
}

Var scalar(double v)
{
    Matrix m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
}

void backward(const Var& root)
{
    if (root.rows() != 1 || root.cols() != 1) {
        throw InvalidArgument("backward() needs a 1x1 root");
    }
    if (!root.requires_grad()) {
        return;
    }
    // Iterative post-order DFS for the topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->accumulate(Matrix::Constant(1, 1, 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && node->grad.size() != 0) {
            node->backward_fn(*node);
        }
    }
    // Intermediate gradients are no longer needed; leaves (parameters) keep theirs.
    for (Node* node : order) {
        if (!node->parents.empty()) {
            node->grad.resize(0, 0);
        }
    }
}

namespace {

void push(const std::shared_ptr<Node>& parent, const Matrix& g)
{
    if (parent->requires_grad) {
        parent->accumulate(g);
    }
}

void check_same_shape(const Var& a, const Var& b, const char* op)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw InvalidArgument(std::string(op) + ": shape mismatch");
    }
}

}  // namespace

Var detach(const Var& a)
{
    return constant(a.value());
}

Var matmul(const Var& a, const Var& b)
{
    if (a.cols() != b.rows()) {
        throw InvalidArgument("matmul: inner dimensions differ");
    }
    return Var::make(a.value() * b.value(), {a, b}, [](Node& n) {
        const auto& pa = n.parents[0];
        const auto& pb = n.parents[1];
        if (pa->requires_grad) {
            pa->accumulate(n.grad * pb->value.transpose());
        }
        if (pb->requires_grad) {
            pb->accumulate(pa->value.transpose() * n.grad);
        }
    });
}

Var matmul_nt(const Var& a, const Var& b)
{
    if (a.cols() != b.cols()) {
        throw InvalidArgument("matmul_nt: column counts differ");
    }
    return Var::make(a.value() * b.value().transpose(), {a, b}, [](Node& n) {
        const auto& pa = n.parents[0];
        const auto& pb = n.parents[1];
        if (pa->requires_grad) {
            pa->accumulate(n.grad * pb->value);
        }
        if (pb->requires_grad) {
            pb->accumulate(n.grad.transpose() * pa->value);
        }
    });
}

Var add(const Var& a, const Var& b)
{
    check_same_shape(a, b, "add");
    return Var::make(a.value() + b.value(), {a, b}, [](Node& n) {
        push(n.parents[0], n.grad);
        push(n.parents[1], n.grad);
    });
}

Var sub(const Var& a, const Var& b)
{
    check_same_shape(a, b, "sub");
    return Var::make(a.value() - b.value(), {a, b}, [](Node& n) {
        push(n.parents[0], n.grad);
        push(n.parents[1], -n.grad);
    });
}

Var mul(const Var& a, const Var& b)
{
    check_same_shape(a, b, "mul");
    return Var::make(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
        const auto& pa = n.parents[0];
        const auto& pb = n.parents[1];
        if (pa->requires_grad) {
            pa->accumulate(n.grad.cwiseProduct(pb->value));
        }
        if (pb->requires_grad) {
            pb->accumulate(n.grad.cwiseProduct(pa->value));
        }
    });
}

Var scale(const Var& a, double s)
{
    return Var::make(a.value() * s, {a}, [s](Node& n) { push(n.parents[0], n.grad * s); });
}

Var add_constant(const Var& a, const Matrix& c)
{
    if (a.rows() != c.rows() || a.cols() != c.cols()) {
        throw InvalidArgument("add_constant: shape mismatch");
    }
    return Var::make(a.value() + c, {a}, [](Node& n) { push(n.parents[0], n.grad); });
}

Var add_row(const Var& a, const Var& row)
{
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw InvalidArgument("add_row: row shape mismatch");
    }
    Matrix out = a.value().rowwise() + row.value().row(0);
    return Var::make(std::move(out), {a, row}, [](Node& n) {
        push(n.parents[0], n.grad);
        if (n.parents[1]->requires_grad) {
            n.parents[1]->accumulate(n.grad.colwise().sum());
        }
    });
}

Var tanh(const Var& a)
{
    Matrix out = a.value().array().tanh().matrix();
    return Var::make(out, {a}, [out](Node& n) {
        push(n.parents[0], (n.grad.array() * (1.0 - out.array().square())).matrix());
    });
}

Var relu(const Var& a)
{
    Matrix out = a.value().cwiseMax(0.0);
    return Var::make(out, {a}, [](Node& n) {
        const auto& x = n.parents[0]->value;
        push(n.parents[0], (x.array() > 0.0).select(n.grad, 0.0).matrix());
    });
}

Var exp(const Var& a)
{
    Matrix out = a.value().array().exp().matrix();
    return Var::make(out, {a}, [out](Node& n) { push(n.parents[0], n.grad.cwiseProduct(out)); });
}

Var log(const Var& a)
{
    Matrix out = a.value().array().log().matrix();
    return Var::make(std::move(out), {a}, [](Node& n) {
        push(n.parents[0], (n.grad.array() / n.parents[0]->value.array()).matrix());
    });
}

Var clamp_min(const Var& a, double floor)
{
    Matrix out = a.value().cwiseMax(floor);
    return Var::make(std::move(out), {a}, [floor](Node& n) {
        const auto& x = n.parents[0]->value;
        push(n.parents[0], (x.array() > floor).select(n.grad, 0.0).matrix());
    });
}

Var softmax_rows(const Var& a)
{
    Matrix out(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        double m = a.value().row(r).maxCoeff();
        out.row(r) = (a.value().row(r).array() - m).exp().matrix();
        out.row(r) /= out.row(r).sum();
    }
    return Var::make(out, {a}, [out](Node& n) {
        // dx = y * (g - sum(g * y))
        Matrix g(out.rows(), out.cols());
        for (Eigen::Index r = 0; r < out.rows(); ++r) {
            double dot = n.grad.row(r).dot(out.row(r));
            g.row(r) = (out.row(r).array() * (n.grad.row(r).array() - dot)).matrix();
        }
        push(n.parents[0], g);
    });
}

Var log_softmax_rows(const Var& a)
{
    Matrix out(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        double m = a.value().row(r).maxCoeff();
        double lse = m + std::log((a.value().row(r).array() - m).exp().sum());
        out.row(r) = (a.value().row(r).array() - lse).matrix();
    }
    return Var::make(out, {a}, [out](Node& n) {
        // dx = g - softmax * sum(g)
        Matrix g(out.rows(), out.cols());
        for (Eigen::Index r = 0; r < out.rows(); ++r) {
            double total = n.grad.row(r).sum();
            g.row(r) = (n.grad.row(r).array() - out.row(r).array().exp() * total).matrix();
        }
        push(n.parents[0], g);
    });
}

Var concat_rows(const std::vector<Var>& parts)
{
    if (parts.empty()) {
        throw InvalidArgument("concat_rows: no parts");
    }
    Eigen::Index cols = parts.front().cols();
    Eigen::Index rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) {
            throw InvalidArgument("concat_rows: column mismatch");
        }
        rows += p.rows();
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    return Var::make(std::move(out), parts, [](Node& n) {
        Eigen::Index at = 0;
        for (const auto& p : n.parents) {
            Eigen::Index r = p->value.rows();
            if (p->requires_grad) {
                p->accumulate(n.grad.middleRows(at, r));
            }
            at += r;
        }
    });
}

Var concat_cols(const std::vector<Var>& parts)
{
    if (parts.empty()) {
        throw InvalidArgument("concat_cols: no parts");
    }
    Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) {
            throw InvalidArgument("concat_cols: row mismatch");
        }
        cols += p.cols();
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    return Var::make(std::move(out), parts, [](Node& n) {
        Eigen::Index at = 0;
        for (const auto& p : n.parents) {
            Eigen::Index c = p->value.cols();
            if (p->requires_grad) {
                p->accumulate(n.grad.middleCols(at, c));
            }
            at += c;
        }
    });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count)
{
    if (start < 0 || count < 0 || start + count > a.rows()) {
        throw InvalidArgument("slice_rows: out of range");
    }
    return Var::make(a.value().middleRows(start, count), {a}, [start, count](Node& n) {
        const auto& p = n.parents[0];
        Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
        g.middleRows(start, count) = n.grad;
        p->accumulate(g);
    });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count)
{
    if (start < 0 || count < 0 || start + count > a.cols()) {
        throw InvalidArgument("slice_cols: out of range");
    }
    return Var::make(a.value().middleCols(start, count), {a}, [start, count](Node& n) {
        const auto& p = n.parents[0];
        Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
        g.middleCols(start, count) = n.grad;
        p->accumulate(g);
    });
}

Var gather_rows(const Var& table, const std::vector<int>& ids)
{
    Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows()) {
            throw InvalidArgument("gather_rows: id out of range");
        }
        out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
    }
    return Var::make(std::move(out), {table}, [ids](Node& n) {
        auto& p = n.parents[0];
        if (p->grad.size() == 0) {
            p->grad = Matrix::Zero(p->value.rows(), p->value.cols());
        }
        for (std::size_t i = 0; i < ids.size(); ++i) {
            p->grad.row(ids[i]) += n.grad.row(static_cast<Eigen::Index>(i));
        }
    });
}

Var pick(const Var& a, const std::vector<int>& ids)
{
    if (static_cast<Eigen::Index>(ids.size()) != a.rows()) {
        throw InvalidArgument("pick: one id per row required");
    }
    Matrix out(a.rows(), 1);
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        int c = ids[static_cast<std::size_t>(r)];
        if (c < 0 || c >= a.cols()) {
            throw InvalidArgument("pick: id out of range");
        }
        out(r, 0) = a.value()(r, c);
    }
    return Var::make(std::move(out), {a}, [ids](Node& n) {
        const auto& p = n.parents[0];
        Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            g(r, ids[static_cast<std::size_t>(r)]) = n.grad(r, 0);
        }
        p->accumulate(g);
    });
}

Var sum(const Var& a)
{
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return Var::make(std::move(out), {a}, [](Node& n) {
        const auto& p = n.parents[0];
        p->accumulate(Matrix::Constant(p->value.rows(), p->value.cols(), n.grad(0, 0)));
    });
}

Var mean(const Var& a)
{
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var mean_rows(const Var& a)
{
    double inv = 1.0 / static_cast<double>(a.rows());
    Matrix out = a.value().colwise().sum() * inv;
    return Var::make(std::move(out), {a}, [inv](Node& n) {
        const auto& p = n.parents[0];
        Matrix g = n.grad.replicate(p->value.rows(), 1) * inv;
        p->accumulate(g);
    });
}

Var masked_mean_rows(const Var& a, const std::vector<bool>& keep)
{
    if (static_cast<Eigen::Index>(keep.size()) != a.rows()) {
        throw InvalidArgument("masked_mean_rows: mask length mismatch");
    }
    double count = 0.0;
    Matrix out = Matrix::Zero(1, a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        if (keep[static_cast<std::size_t>(r)]) {
            out += a.value().row(r);
            count += 1.0;
        }
    }
    if (count == 0.0) {
        throw InvalidArgument("masked_mean_rows: every row masked");
    }
    double inv = 1.0 / count;
    out *= inv;
    return Var::make(std::move(out), {a}, [keep, inv](Node& n) {
        const auto& p = n.parents[0];
        Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            if (keep[static_cast<std::size_t>(r)]) {
                g.row(r) = n.grad.row(0) * inv;
            }
        }
        p->accumulate(g);
    });
}

Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias, double eps)
{
    const Eigen::Index d = a.cols();
    if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
        throw InvalidArgument("layer_norm_rows: gain/bias shape mismatch");
    }
    Matrix xhat(a.rows(), d);
    Eigen::VectorXd inv_std(a.rows());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        double mu = a.value().row(r).mean();
        auto centered = (a.value().row(r).array() - mu).matrix();
        double var = centered.squaredNorm() / static_cast<double>(d);
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = centered * inv_std(r);
    }
    Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
    out.rowwise() += bias.value().row(0);
    return Var::make(std::move(out), {a, gain, bias}, [xhat, inv_std, d](Node& n) {
        const auto& px = n.parents[0];
        const auto& pg = n.parents[1];
        const auto& pb = n.parents[2];
        if (pg->requires_grad) {
            pg->accumulate(n.grad.cwiseProduct(xhat).colwise().sum());
        }
        if (pb->requires_grad) {
            pb->accumulate(n.grad.colwise().sum());
        }
        if (px->requires_grad) {
            Matrix dxhat = (n.grad.array().rowwise() * pg->value.row(0).array()).matrix();
            Matrix g(dxhat.rows(), d);
            double inv_d = 1.0 / static_cast<double>(d);
            for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                double s1 = dxhat.row(r).sum();
                double s2 = dxhat.row(r).dot(xhat.row(r));
                g.row(r) = (inv_std(r) * inv_d) *
                           (static_cast<double>(d) * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2)
                               .matrix();
            }
            px->accumulate(g);
        }
    });
}

Var l2_normalize_rows(const Var& a, double eps)
{
    Matrix out(a.rows(), a.cols());
    Eigen::VectorXd norms(a.rows());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        norms(r) = std::max(a.value().row(r).norm(), eps);
        out.row(r) = a.value().row(r) / norms(r);
    }
    return Var::make(out, {a}, [out, norms](Node& n) {
        // d(x/|x|) = (g - y (g . y)) / |x|
        Matrix g(out.rows(), out.cols());
        for (Eigen::Index r = 0; r < out.rows(); ++r) {
            double dot = n.grad.row(r).dot(out.row(r));
            g.row(r) = (n.grad.row(r) - out.row(r) * dot) / norms(r);
        }
        push(n.parents[0], g);
    });
}

}  // namespace oltqa::ag
