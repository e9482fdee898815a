#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "regvd/matrix.hpp"

namespace regvd {

/// Handle to a node on a Tape.
struct Var {
    int index = -1;
    bool valid() const { return index >= 0; }
};

/// Row-wise softmax with max-subtraction stabilization.
template <typename T>
Matrix<T> softmax(const Matrix<T>& logits) {
    Matrix<T> out(logits.rows(), logits.cols());
    for (int i = 0; i < logits.rows(); ++i) {
        T hi = logits(i, 0);
        for (int j = 1; j < logits.cols(); ++j) hi = std::max(hi, logits(i, j));
        T total = T(0);
        for (int j = 0; j < logits.cols(); ++j) {
            out(i, j) = std::exp(logits(i, j) - hi);
            total += out(i, j);
        }
        for (int j = 0; j < logits.cols(); ++j) out(i, j) /= total;
    }
    return out;
}

/// Reverse-mode gradient tape. Operations evaluate eagerly and record the
/// primitive graph; backward() accumulates exact gradients into every node
/// reachable from a parameter or gather leaf. One tape per example/batch,
/// confined to a single worker.
template <typename T>
class Tape {
    enum class Op : std::uint8_t {
        Parameter,
        Constant,
        GatherRows,
        MatMul,
        MatMulTransposed,
        Add,
        AddRowBroadcast,
        AddScalarBroadcast,
        Multiply,
        ScaleRows,
        Affine,
        Relu,
        Sigmoid,
        Tanh,
        ConcatCols,
        RowSum,
        RowMax,
        CrossEntropy,
    };

    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        Matrix<T> value;           // owned result (unused for Parameter nodes)
        const Matrix<T>* external = nullptr;  // Parameter / GatherRows source
        Matrix<T> grad;
        Matrix<T> cache;           // CrossEntropy keeps its softmax here
        std::vector<int> ints;     // gather row ids / labels / argmax indices
        T mul = T(0);
        T shift = T(0);
        bool needs_grad = false;
    };

public:
    /// Record of one embedding-table gather; the trainer scatters the node's
    /// gradient rows back into the table's gradient buffer after backward().
    struct Gather {
        const Matrix<T>* table;
        std::vector<int> row_ids;
        Var node;
    };

    /// Leaf referencing externally owned parameter storage (no copy). The
    /// storage must outlive the tape and stay unchanged until backward().
    Var parameter(const Matrix<T>& storage) {
        Node n;
        n.op = Op::Parameter;
        n.external = &storage;
        n.needs_grad = true;
        return push(std::move(n));
    }

    /// Leaf with no gradient (e.g. the normalized adjacency).
    Var constant(Matrix<T> value) {
        Node n;
        n.op = Op::Constant;
        n.value = std::move(value);
        return push(std::move(n));
    }

    /// Rows of `table` selected by `row_ids`, as an (ids.size() x cols)
    /// matrix. Gradients stay on the gather node; see gathers().
    Var gather_rows(const Matrix<T>& table, const std::vector<int>& row_ids) {
        Node n;
        n.op = Op::GatherRows;
        n.external = &table;
        n.ints = row_ids;
        n.needs_grad = true;
        n.value = Matrix<T>(static_cast<int>(row_ids.size()), table.cols());
        for (std::size_t i = 0; i < row_ids.size(); ++i) {
            const int r = row_ids[i];
            require(r >= 0 && r < table.rows(),
                    "gather_rows: row id " + std::to_string(r) + " out of range");
            for (int j = 0; j < table.cols(); ++j) n.value(static_cast<int>(i), j) = table(r, j);
        }
        Var v = push(std::move(n));
        gathers_.push_back({&table, row_ids, v});
        return v;
    }

    Var matmul(Var a, Var b) {
        const Matrix<T>& ma = value(a);
        const Matrix<T>& mb = value(b);
        require(ma.cols() == mb.rows(), shape_error("matmul", ma, mb));
        Matrix<T> out(ma.rows(), mb.cols());
        mm_nn(out, ma, mb);
        return push_binary(Op::MatMul, a, b, std::move(out));
    }

    /// a * b^T without materializing the transpose.
    Var matmul_transposed(Var a, Var b) {
        const Matrix<T>& ma = value(a);
        const Matrix<T>& mb = value(b);
        require(ma.cols() == mb.cols(), shape_error("matmul_transposed", ma, mb));
        Matrix<T> out(ma.rows(), mb.rows());
        mm_nt(out, ma, mb);
        return push_binary(Op::MatMulTransposed, a, b, std::move(out));
    }

    Var add(Var a, Var b) {
        const Matrix<T>& ma = value(a);
        const Matrix<T>& mb = value(b);
        require(ma.same_shape(mb), shape_error("add", ma, mb));
        Matrix<T> out = ma;
        for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += mb.data()[i];
        return push_binary(Op::Add, a, b, std::move(out));
    }

    /// a(m,n) + row vector b(1,n), broadcast over rows.
    Var add_row_broadcast(Var a, Var b) {
        const Matrix<T>& ma = value(a);
        const Matrix<T>& mb = value(b);
        require(mb.rows() == 1 && mb.cols() == ma.cols(), shape_error("add_row_broadcast", ma, mb));
        Matrix<T> out = ma;
        for (int i = 0; i < out.rows(); ++i)
            for (int j = 0; j < out.cols(); ++j) out(i, j) += mb(0, j);
        return push_binary(Op::AddRowBroadcast, a, b, std::move(out));
    }

    /// a(m,n) + scalar b(1,1).
    Var add_scalar_broadcast(Var a, Var b) {
        const Matrix<T>& ma = value(a);
        const Matrix<T>& mb = value(b);
        require(mb.rows() == 1 && mb.cols() == 1, shape_error("add_scalar_broadcast", ma, mb));
        Matrix<T> out = ma;
        for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += mb(0, 0);
        return push_binary(Op::AddScalarBroadcast, a, b, std::move(out));
    }

    /// Element-wise product, same shapes.
    Var multiply(Var a, Var b) {
        const Matrix<T>& ma = value(a);
        const Matrix<T>& mb = value(b);
        require(ma.same_shape(mb), shape_error("multiply", ma, mb));
        Matrix<T> out = ma;
        for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= mb.data()[i];
        return push_binary(Op::Multiply, a, b, std::move(out));
    }

    /// a(m,n) scaled per row by the column vector s(m,1); the per-node
    /// attention gate in the readout.
    Var scale_rows(Var a, Var s) {
        const Matrix<T>& ma = value(a);
        const Matrix<T>& ms = value(s);
        require(ms.cols() == 1 && ms.rows() == ma.rows(), shape_error("scale_rows", ma, ms));
        Matrix<T> out = ma;
        for (int i = 0; i < out.rows(); ++i)
            for (int j = 0; j < out.cols(); ++j) out(i, j) *= ms(i, 0);
        return push_binary(Op::ScaleRows, a, s, std::move(out));
    }

    /// mul * a + shift, element-wise with compile-time constants.
    Var affine(Var a, T mul, T shift) {
        const Matrix<T>& ma = value(a);
        Matrix<T> out = ma;
        for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = mul * out.data()[i] + shift;
        Node n;
        n.op = Op::Affine;
        n.a = a.index;
        n.mul = mul;
        n.shift = shift;
        n.value = std::move(out);
        n.needs_grad = node(a).needs_grad;
        return push(std::move(n));
    }

    Var relu(Var a) {
        Matrix<T> out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::max(out.data()[i], T(0));
        return push_unary(Op::Relu, a, std::move(out));
    }

    Var sigmoid(Var a) {
        Matrix<T> out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = T(1) / (T(1) + std::exp(-out.data()[i]));
        return push_unary(Op::Sigmoid, a, std::move(out));
    }

    Var tanh(Var a) {
        Matrix<T> out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::tanh(out.data()[i]);
        return push_unary(Op::Tanh, a, std::move(out));
    }

    /// [a || b] along columns.
    Var concat_cols(Var a, Var b) {
        const Matrix<T>& ma = value(a);
        const Matrix<T>& mb = value(b);
        require(ma.rows() == mb.rows(), shape_error("concat_cols", ma, mb));
        Matrix<T> out(ma.rows(), ma.cols() + mb.cols());
        for (int i = 0; i < ma.rows(); ++i) {
            for (int j = 0; j < ma.cols(); ++j) out(i, j) = ma(i, j);
            for (int j = 0; j < mb.cols(); ++j) out(i, ma.cols() + j) = mb(i, j);
        }
        return push_binary(Op::ConcatCols, a, b, std::move(out));
    }

    /// Sums the m rows together: (m,n) -> (1,n).
    Var row_sum(Var a) {
        const Matrix<T>& ma = value(a);
        require(ma.rows() >= 1, "row_sum: empty input");
        Matrix<T> out(1, ma.cols());
        for (int i = 0; i < ma.rows(); ++i)
            for (int j = 0; j < ma.cols(); ++j) out(0, j) += ma(i, j);
        return push_unary(Op::RowSum, a, std::move(out));
    }

    /// Max over the m rows per column: (m,n) -> (1,n). The gradient flows
    /// only to the argmax entry, first row on ties.
    Var row_max(Var a) {
        const Matrix<T>& ma = value(a);
        require(ma.rows() >= 1, "row_max: empty input");
        Matrix<T> out(1, ma.cols());
        std::vector<int> argmax(ma.cols(), 0);
        for (int j = 0; j < ma.cols(); ++j) {
            T best = ma(0, j);
            for (int i = 1; i < ma.rows(); ++i) {
                if (ma(i, j) > best) {
                    best = ma(i, j);
                    argmax[j] = i;
                }
            }
            out(0, j) = best;
        }
        Node n;
        n.op = Op::RowMax;
        n.a = a.index;
        n.value = std::move(out);
        n.ints = std::move(argmax);
        n.needs_grad = node(a).needs_grad;
        return push(std::move(n));
    }

    /// Mean of -log softmax(logits)[label] over the batch rows, with
    /// max-subtraction stabilization. Returns a 1x1 scalar node.
    Var cross_entropy_with_logits(Var logits, const std::vector<int>& labels) {
        const Matrix<T>& ml = value(logits);
        require(!labels.empty(), "cross_entropy_with_logits: empty batch");
        require(static_cast<int>(labels.size()) == ml.rows(),
                "cross_entropy_with_logits: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(ml.rows()) + " logit rows");
        for (int label : labels) {
            require(label >= 0 && label < ml.cols(),
                    "cross_entropy_with_logits: label " + std::to_string(label) + " out of range");
        }
        Matrix<T> probs = softmax(ml);
        Matrix<T> out(1, 1);
        T total = T(0);
        for (int i = 0; i < ml.rows(); ++i) {
            T hi = ml(i, 0);
            for (int j = 1; j < ml.cols(); ++j) hi = std::max(hi, ml(i, j));
            T lse = T(0);
            for (int j = 0; j < ml.cols(); ++j) lse += std::exp(ml(i, j) - hi);
            total += hi + std::log(lse) - ml(i, labels[i]);
        }
        out(0, 0) = total / static_cast<T>(ml.rows());
        Node n;
        n.op = Op::CrossEntropy;
        n.a = logits.index;
        n.value = std::move(out);
        n.cache = std::move(probs);
        n.ints = labels;
        n.needs_grad = node(logits).needs_grad;
        return push(std::move(n));
    }

    const Matrix<T>& value(Var v) const {
        const Node& n = node(v);
        return n.op == Op::Parameter ? *n.external : n.value;
    }

    const Matrix<T>& grad(Var v) const {
        const Node& n = node(v);
        if (!backward_done_) throw std::runtime_error("grad: backward() has not run");
        if (!n.needs_grad) throw std::runtime_error("grad: node does not require gradients");
        return n.grad;
    }

    const std::vector<Gather>& gathers() const { return gathers_; }

    /// Reverse-mode accumulation from a 1x1 loss node. `seed` scales the
    /// whole gradient (e.g. 1/batch for a mean-of-examples loss assembled
    /// across tapes).
    void backward(Var loss, T seed = T(1)) {
        if (backward_done_) throw std::runtime_error("backward: tape already differentiated; build a new tape");
        const Matrix<T>& lv = value(loss);
        require(lv.rows() == 1 && lv.cols() == 1, "backward: loss must be 1x1");
        backward_done_ = true;
        for (Node& n : nodes_) {
            if (n.needs_grad) {
                const Matrix<T>& v = n.op == Op::Parameter ? *n.external : n.value;
                n.grad = Matrix<T>(v.rows(), v.cols());
            }
        }
        if (!node(loss).needs_grad) return;  // loss independent of all parameters
        node(loss).grad(0, 0) = seed;
        for (int i = loss.index; i >= 0; --i) propagate(nodes_[i]);
    }

private:
    Node& node(Var v) {
        require(v.index >= 0 && v.index < static_cast<int>(nodes_.size()), "invalid Var");
        return nodes_[v.index];
    }
    const Node& node(Var v) const {
        require(v.index >= 0 && v.index < static_cast<int>(nodes_.size()), "invalid Var");
        return nodes_[v.index];
    }

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Var push_unary(Op op, Var a, Matrix<T> out) {
        Node n;
        n.op = op;
        n.a = a.index;
        n.value = std::move(out);
        n.needs_grad = node(a).needs_grad;
        return push(std::move(n));
    }

    Var push_binary(Op op, Var a, Var b, Matrix<T> out) {
        Node n;
        n.op = op;
        n.a = a.index;
        n.b = b.index;
        n.value = std::move(out);
        n.needs_grad = node(a).needs_grad || node(b).needs_grad;
        return push(std::move(n));
    }

    static std::string shape_error(const char* op, const Matrix<T>& a, const Matrix<T>& b) {
        return std::string(op) + ": incompatible shapes " + std::to_string(a.rows()) + "x" +
               std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
               std::to_string(b.cols());
    }

    // C += A * B
    static void mm_nn(Matrix<T>& c, const Matrix<T>& a, const Matrix<T>& b) {
        const int m = a.rows(), k = a.cols(), n = b.cols();
        for (int i = 0; i < m; ++i) {
            T* crow = c.row(i);
            for (int p = 0; p < k; ++p) {
                const T aip = a(i, p);
                if (aip == T(0)) continue;
                const T* brow = b.row(p);
                for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
        }
    }

    // C += A * B^T
    static void mm_nt(Matrix<T>& c, const Matrix<T>& a, const Matrix<T>& b) {
        const int m = a.rows(), k = a.cols(), n = b.rows();
        for (int i = 0; i < m; ++i) {
            const T* arow = a.row(i);
            for (int j = 0; j < n; ++j) {
                const T* brow = b.row(j);
                T acc = T(0);
                for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
                c(i, j) += acc;
            }
        }
    }

    // C += A^T * B
    static void mm_tn(Matrix<T>& c, const Matrix<T>& a, const Matrix<T>& b) {
        const int m = a.rows(), k = a.cols(), n = b.cols();
        for (int i = 0; i < m; ++i) {
            const T* arow = a.row(i);
            const T* brow = b.row(i);
            for (int p = 0; p < k; ++p) {
                const T aip = arow[p];
                if (aip == T(0)) continue;
                T* crow = c.row(p);
                for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
        }
    }

    const Matrix<T>& input_value(int index) const {
        const Node& n = nodes_[index];
        return n.op == Op::Parameter ? *n.external : n.value;
    }

    bool input_needs_grad(int index) const { return nodes_[index].needs_grad; }

    void propagate(Node& n) {
        if (!n.needs_grad) return;
        const Matrix<T>& g = n.grad;
        switch (n.op) {
            case Op::Parameter:
            case Op::Constant:
            case Op::GatherRows:
                break;
            case Op::MatMul: {
                if (input_needs_grad(n.a)) mm_nt(nodes_[n.a].grad, g, input_value(n.b));
                if (input_needs_grad(n.b)) mm_tn(nodes_[n.b].grad, input_value(n.a), g);
                break;
            }
            case Op::MatMulTransposed: {
                if (input_needs_grad(n.a)) mm_nn(nodes_[n.a].grad, g, input_value(n.b));
                if (input_needs_grad(n.b)) mm_tn(nodes_[n.b].grad, g, input_value(n.a));
                break;
            }
            case Op::Add: {
                accumulate_same(n.a, g);
                accumulate_same(n.b, g);
                break;
            }
            case Op::AddRowBroadcast: {
                accumulate_same(n.a, g);
                if (input_needs_grad(n.b)) {
                    Matrix<T>& db = nodes_[n.b].grad;
                    for (int i = 0; i < g.rows(); ++i)
                        for (int j = 0; j < g.cols(); ++j) db(0, j) += g(i, j);
                }
                break;
            }
            case Op::AddScalarBroadcast: {
                accumulate_same(n.a, g);
                if (input_needs_grad(n.b)) {
                    T total = T(0);
                    for (std::size_t i = 0; i < g.size(); ++i) total += g.data()[i];
                    nodes_[n.b].grad(0, 0) += total;
                }
                break;
            }
            case Op::Multiply: {
                if (input_needs_grad(n.a)) {
                    Matrix<T>& da = nodes_[n.a].grad;
                    const Matrix<T>& vb = input_value(n.b);
                    for (std::size_t i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i] * vb.data()[i];
                }
                if (input_needs_grad(n.b)) {
                    Matrix<T>& db = nodes_[n.b].grad;
                    const Matrix<T>& va = input_value(n.a);
                    for (std::size_t i = 0; i < g.size(); ++i) db.data()[i] += g.data()[i] * va.data()[i];
                }
                break;
            }
            case Op::ScaleRows: {
                const Matrix<T>& va = input_value(n.a);
                const Matrix<T>& vs = input_value(n.b);
                if (input_needs_grad(n.a)) {
                    Matrix<T>& da = nodes_[n.a].grad;
                    for (int i = 0; i < g.rows(); ++i)
                        for (int j = 0; j < g.cols(); ++j) da(i, j) += g(i, j) * vs(i, 0);
                }
                if (input_needs_grad(n.b)) {
                    Matrix<T>& ds = nodes_[n.b].grad;
                    for (int i = 0; i < g.rows(); ++i) {
                        T acc = T(0);
                        for (int j = 0; j < g.cols(); ++j) acc += g(i, j) * va(i, j);
                        ds(i, 0) += acc;
                    }
                }
                break;
            }
            case Op::Affine: {
                if (input_needs_grad(n.a)) {
                    Matrix<T>& da = nodes_[n.a].grad;
                    for (std::size_t i = 0; i < g.size(); ++i) da.data()[i] += n.mul * g.data()[i];
                }
                break;
            }
            case Op::Relu: {
                if (input_needs_grad(n.a)) {
                    Matrix<T>& da = nodes_[n.a].grad;
                    const Matrix<T>& va = input_value(n.a);
                    for (std::size_t i = 0; i < g.size(); ++i)
                        if (va.data()[i] > T(0)) da.data()[i] += g.data()[i];
                }
                break;
            }
            case Op::Sigmoid: {
                if (input_needs_grad(n.a)) {
                    Matrix<T>& da = nodes_[n.a].grad;
                    const Matrix<T>& y = n.value;
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        const T yi = y.data()[i];
                        da.data()[i] += g.data()[i] * yi * (T(1) - yi);
                    }
                }
                break;
            }
            case Op::Tanh: {
                if (input_needs_grad(n.a)) {
                    Matrix<T>& da = nodes_[n.a].grad;
                    const Matrix<T>& y = n.value;
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        const T yi = y.data()[i];
                        da.data()[i] += g.data()[i] * (T(1) - yi * yi);
                    }
                }
                break;
            }
            case Op::ConcatCols: {
                const int ca = input_value(n.a).cols();
                if (input_needs_grad(n.a)) {
                    Matrix<T>& da = nodes_[n.a].grad;
                    for (int i = 0; i < g.rows(); ++i)
                        for (int j = 0; j < ca; ++j) da(i, j) += g(i, j);
                }
                if (input_needs_grad(n.b)) {
                    Matrix<T>& db = nodes_[n.b].grad;
                    for (int i = 0; i < g.rows(); ++i)
                        for (int j = 0; j < db.cols(); ++j) db(i, j) += g(i, ca + j);
                }
                break;
            }
            case Op::RowSum: {
                if (input_needs_grad(n.a)) {
                    Matrix<T>& da = nodes_[n.a].grad;
                    for (int i = 0; i < da.rows(); ++i)
                        for (int j = 0; j < da.cols(); ++j) da(i, j) += g(0, j);
                }
                break;
            }
            case Op::RowMax: {
                if (input_needs_grad(n.a)) {
                    Matrix<T>& da = nodes_[n.a].grad;
                    for (int j = 0; j < da.cols(); ++j) da(n.ints[j], j) += g(0, j);
                }
                break;
            }
            case Op::CrossEntropy: {
                if (input_needs_grad(n.a)) {
                    Matrix<T>& da = nodes_[n.a].grad;
                    const Matrix<T>& probs = n.cache;
                    const T scale = g(0, 0) / static_cast<T>(probs.rows());
                    for (int i = 0; i < probs.rows(); ++i) {
                        for (int j = 0; j < probs.cols(); ++j) {
                            const T indicator = (j == n.ints[i]) ? T(1) : T(0);
                            da(i, j) += scale * (probs(i, j) - indicator);
                        }
                    }
                }
                break;
            }
        }
    }

    void accumulate_same(int index, const Matrix<T>& g) {
        if (!input_needs_grad(index)) return;
        Matrix<T>& dst = nodes_[index].grad;
        for (std::size_t i = 0; i < g.size(); ++i) dst.data()[i] += g.data()[i];
    }

    std::deque<Node> nodes_;  // deque keeps value()/grad() references stable as ops are added
    std::vector<Gather> gathers_;
    bool backward_done_ = false;
};

}  // namespace regvd
