#ifndef GATSM_GRAPH_HPP
#define GATSM_GRAPH_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "gatsm/rng.hpp"
#include "gatsm/tensor.hpp"

namespace gatsm {

using NodeId = std::uint32_t;

/// Running batch-normalization statistics. Owned by the module that holds the
/// layer; mutated on training forwards, read on evaluation forwards.
struct BatchNormState {
    Tensor mean;
    Tensor var;
    bool initialized = false;
};

// Shared low-level kernels. The plain (graph-free) evaluation paths reuse these
// so that graph forwards and direct evaluation are bit-identical.
namespace kernels {

/// C(m x n) = A(m x k) * B(k x n), row-major.
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
/// C += A^T * B where A is (k x m), B is (k x n), C is (m x n).
void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n);
/// C += A * B^T where A is (m x k), B is (n x k), C is (m x n).
void matmul_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n);
/// Row-wise softmax treating -inf entries as exact zeros. Throws when a row has
/// no finite entry.
void softmax_masked_rows(const double* x, double* out, std::size_t rows, std::size_t cols);

} // namespace kernels

/// Define-by-run reverse-mode tape over tensors. Forward values are computed
/// eagerly as nodes are created; a graph is built per forward pass and is
/// confined to one thread. Multiple graphs may live on parallel threads.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Leaf that never receives gradient.
    NodeId constant(Tensor v);
    /// Trainable leaf; always owns a gradient buffer after backward().
    NodeId param(Tensor v);

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double c);
    /// Adds a length-H vector to every row of an (N x H) matrix.
    NodeId add_rowvec(NodeId a, NodeId b);
    NodeId relu(NodeId a);
    NodeId leaky_relu(NodeId a, double slope);
    NodeId tanh_op(NodeId a);
    /// out[i][j] = p[i] + q[j] for vectors p (len m), q (len n).
    NodeId outer_sum(NodeId p, NodeId q);
    /// Writes -inf wherever keep == 0; gradient flows only through kept entries.
    NodeId mask_blocked(NodeId a, const Tensor& keep);
    /// Row-wise softmax over finite entries; -inf maps to exactly 0.
    NodeId softmax_masked(NodeId logits);
    /// Inverted dropout; identity when rate == 0.
    NodeId dropout(NodeId a, double rate, Rng& rng);
    /// Column-wise batch normalization over the rows of an (N x H) matrix.
    NodeId batchnorm_cols(NodeId x, NodeId gamma, NodeId beta, BatchNormState& state, bool training);
    NodeId reshape(NodeId a, std::vector<std::size_t> shape);
    /// Stacks rank-1 nodes of equal length N as the columns of an (N x M) matrix.
    NodeId stack_cols(const std::vector<NodeId>& cols);
    /// out[t][m] = sum_b h[t*M + m][b] * w[m][b]; h is (T*M x B), w is (M x B).
    NodeId nbm_project(NodeId h, NodeId w, std::size_t steps);
    NodeId sum_all(NodeId a);
    /// Sum of squared differences against a fixed target.
    NodeId mse_sum(NodeId pred, Tensor target);
    /// Sum over entries of binary cross-entropy with logits; targets in {0,1}.
    NodeId bce_logits_sum(NodeId logits, Tensor target);
    /// Sum over rows of multi-class cross-entropy with logits.
    NodeId ce_logits_sum(NodeId logits, std::vector<std::size_t> labels);

    /// Reverse pass from a scalar output. Populates gradient buffers for every
    /// param node (zero when unreachable).
    void backward(NodeId output);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    const Tensor& grad(NodeId id) const;
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad; // empty until touched by backward
        bool needs_grad = false;
        bool is_param = false;
        std::function<void(Graph&, const Tensor&)> back; // receives this node's grad
    };

    NodeId push(Tensor value, bool needs_grad, std::function<void(Graph&, const Tensor&)> back);
    void accumulate(NodeId id, const Tensor& g);
    void accumulate(NodeId id, std::size_t flat_index, double g);
    bool needs(NodeId id) const { return nodes_[id].needs_grad; }

    std::vector<Node> nodes_;
};

} // namespace gatsm

#endif
