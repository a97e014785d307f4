#include "gatsm/graph.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace gatsm {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}
} // namespace

namespace kernels {

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
    // c(m x n) += a^T(m x k') * b, with a stored as (k x m)
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
    // c(m x n) += a(m x k) * b^T, with b stored as (n x k)
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

void softmax_masked_rows(const double* x, double* out, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = x + i * cols;
        double mx = kNegInf;
        for (std::size_t j = 0; j < cols; ++j) {
            if (row[j] > mx) mx = row[j];
        }
        if (mx == kNegInf) {
            throw std::invalid_argument("softmax_masked: row " + std::to_string(i) +
                                        " has no finite entry (degenerate mask)");
        }
        double denom = 0.0;
        double* orow = out + i * cols;
        for (std::size_t j = 0; j < cols; ++j) {
            if (row[j] == kNegInf) {
                orow[j] = 0.0;
            } else {
                orow[j] = std::exp(row[j] - mx);
                denom += orow[j];
            }
        }
        for (std::size_t j = 0; j < cols; ++j) orow[j] /= denom;
    }
}

} // namespace kernels

NodeId Graph::push(Tensor value, bool needs_grad, std::function<void(Graph&, const Tensor&)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

void Graph::accumulate(NodeId id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Graph::accumulate(NodeId id, std::size_t flat_index, double g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    n.grad[flat_index] += g;
}

const Tensor& Graph::grad(NodeId id) const {
    const Node& n = nodes_[id];
    if (n.grad.empty()) {
        throw std::logic_error("Graph::grad: node has no gradient buffer (run backward first)");
    }
    return n.grad;
}

NodeId Graph::constant(Tensor v) { return push(std::move(v), false, nullptr); }

NodeId Graph::param(Tensor v) {
    NodeId id = push(std::move(v), true, nullptr);
    nodes_[id].is_param = true;
    return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    const Tensor& av = nodes_[a].value;
    const Tensor& bv = nodes_[b].value;
    require(av.rank() == 2 && bv.rank() == 2, "matmul: operands must be rank-2");
    require(av.dim(1) == bv.dim(0), "matmul: inner dimensions disagree, " + av.shape_str() + " vs " +
                                        bv.shape_str());
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out({m, n});
    kernels::matmul(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
    const bool ng = needs(a) || needs(b);
    return push(std::move(out), ng, [a, b, m, k, n](Graph& g, const Tensor& gr) {
        const Tensor& av = g.nodes_[a].value;
        const Tensor& bv = g.nodes_[b].value;
        if (g.needs(a)) {
            Tensor da = Tensor::zeros({m, k});
            kernels::matmul_nt_acc(gr.data().data(), bv.data().data(), da.data().data(), m, n, k);
            g.accumulate(a, da);
        }
        if (g.needs(b)) {
            Tensor db = Tensor::zeros({k, n});
            kernels::matmul_tn_acc(av.data().data(), gr.data().data(), db.data().data(), k, m, n);
            g.accumulate(b, db);
        }
    });
}

NodeId Graph::add(NodeId a, NodeId b) {
    const Tensor& av = nodes_[a].value;
    const Tensor& bv = nodes_[b].value;
    require(av.same_shape(bv), "add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, const Tensor& gr) {
        g.accumulate(a, gr);
        g.accumulate(b, gr);
    });
}

NodeId Graph::sub(NodeId a, NodeId b) {
    const Tensor& av = nodes_[a].value;
    const Tensor& bv = nodes_[b].value;
    require(av.same_shape(bv), "sub: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, const Tensor& gr) {
        g.accumulate(a, gr);
        if (g.needs(b)) {
            Tensor neg = gr;
            for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
            g.accumulate(b, neg);
        }
    });
}

NodeId Graph::mul(NodeId a, NodeId b) {
    const Tensor& av = nodes_[a].value;
    const Tensor& bv = nodes_[b].value;
    require(av.same_shape(bv), "mul: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, const Tensor& gr) {
        const Tensor& av = g.nodes_[a].value;
        const Tensor& bv = g.nodes_[b].value;
        if (g.needs(a)) {
            Tensor da = gr;
            for (std::size_t i = 0; i < da.size(); ++i) da[i] *= bv[i];
            g.accumulate(a, da);
        }
        if (g.needs(b)) {
            Tensor db = gr;
            for (std::size_t i = 0; i < db.size(); ++i) db[i] *= av[i];
            g.accumulate(b, db);
        }
    });
}

NodeId Graph::scale(NodeId a, double c) {
    Tensor out = nodes_[a].value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return push(std::move(out), needs(a), [a, c](Graph& g, const Tensor& gr) {
        Tensor da = gr;
        for (std::size_t i = 0; i < da.size(); ++i) da[i] *= c;
        g.accumulate(a, da);
    });
}

NodeId Graph::add_rowvec(NodeId a, NodeId b) {
    const Tensor& av = nodes_[a].value;
    const Tensor& bv = nodes_[b].value;
    require(av.rank() == 2, "add_rowvec: matrix operand must be rank-2");
    require(bv.size() == av.dim(1), "add_rowvec: vector length " + std::to_string(bv.size()) +
                                        " does not match column count " + std::to_string(av.dim(1)));
    const std::size_t rows = av.dim(0), cols = av.dim(1);
    Tensor out = av;
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += bv[j];
    return push(std::move(out), needs(a) || needs(b), [a, b, rows, cols](Graph& g, const Tensor& gr) {
        g.accumulate(a, gr);
        if (g.needs(b)) {
            Tensor db = Tensor::zeros(g.nodes_[b].value.shape());
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) db[j] += gr[i * cols + j];
            g.accumulate(b, db);
        }
    });
}

NodeId Graph::relu(NodeId a) {
    Tensor out = nodes_[a].value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    return push(std::move(out), needs(a), [a](Graph& g, const Tensor& gr) {
        const Tensor& av = g.nodes_[a].value;
        Tensor da = gr;
        for (std::size_t i = 0; i < da.size(); ++i) da[i] = av[i] > 0.0 ? da[i] : 0.0;
        g.accumulate(a, da);
    });
}

NodeId Graph::leaky_relu(NodeId a, double slope) {
    Tensor out = nodes_[a].value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : slope * out[i];
    return push(std::move(out), needs(a), [a, slope](Graph& g, const Tensor& gr) {
        const Tensor& av = g.nodes_[a].value;
        Tensor da = gr;
        for (std::size_t i = 0; i < da.size(); ++i) da[i] = av[i] > 0.0 ? da[i] : slope * da[i];
        g.accumulate(a, da);
    });
}

NodeId Graph::tanh_op(NodeId a) {
    Tensor out = nodes_[a].value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    NodeId id = push(std::move(out), needs(a), nullptr);
    if (needs(a)) {
        nodes_[id].back = [a, id](Graph& g, const Tensor& gr) {
            const Tensor& y = g.nodes_[id].value;
            Tensor da = gr;
            for (std::size_t i = 0; i < da.size(); ++i) da[i] *= 1.0 - y[i] * y[i];
            g.accumulate(a, da);
        };
    }
    return id;
}

NodeId Graph::outer_sum(NodeId p, NodeId q) {
    const Tensor& pv = nodes_[p].value;
    const Tensor& qv = nodes_[q].value;
    require(pv.rank() == 1 && qv.rank() == 1, "outer_sum: operands must be rank-1");
    const std::size_t m = pv.size(), n = qv.size();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = pv[i] + qv[j];
    return push(std::move(out), needs(p) || needs(q), [p, q, m, n](Graph& g, const Tensor& gr) {
        if (g.needs(p)) {
            Tensor dp = Tensor::zeros({m});
            for (std::size_t i = 0; i < m; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += gr[i * n + j];
                dp[i] = s;
            }
            g.accumulate(p, dp);
        }
        if (g.needs(q)) {
            Tensor dq = Tensor::zeros({n});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) dq[j] += gr[i * n + j];
            g.accumulate(q, dq);
        }
    });
}

NodeId Graph::mask_blocked(NodeId a, const Tensor& keep) {
    const Tensor& av = nodes_[a].value;
    require(av.same_shape(keep), "mask_blocked: mask shape " + keep.shape_str() +
                                     " does not match operand " + av.shape_str());
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (keep[i] == 0.0) out[i] = kNegInf;
    }
    return push(std::move(out), needs(a), [a, keep](Graph& g, const Tensor& gr) {
        Tensor da = gr;
        for (std::size_t i = 0; i < da.size(); ++i) {
            if (keep[i] == 0.0) da[i] = 0.0;
        }
        g.accumulate(a, da);
    });
}

NodeId Graph::softmax_masked(NodeId logits) {
    const Tensor& lv = nodes_[logits].value;
    require(lv.rank() == 1 || lv.rank() == 2, "softmax_masked: operand must be rank-1 or rank-2");
    const std::size_t rows = lv.rank() == 2 ? lv.dim(0) : 1;
    const std::size_t cols = lv.rank() == 2 ? lv.dim(1) : lv.size();
    Tensor out(lv.shape());
    kernels::softmax_masked_rows(lv.data().data(), out.data().data(), rows, cols);
    NodeId id = push(std::move(out), needs(logits), nullptr);
    if (needs(logits)) {
        nodes_[id].back = [logits, id, rows, cols](Graph& g, const Tensor& gr) {
            const Tensor& a = g.nodes_[id].value;
            Tensor dl = Tensor::zeros(a.shape());
            for (std::size_t i = 0; i < rows; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < cols; ++j) dot += gr[i * cols + j] * a[i * cols + j];
                for (std::size_t j = 0; j < cols; ++j) {
                    dl[i * cols + j] = a[i * cols + j] * (gr[i * cols + j] - dot);
                }
            }
            g.accumulate(logits, dl);
        };
    }
    return id;
}

NodeId Graph::dropout(NodeId a, double rate, Rng& rng) {
    if (rate <= 0.0) return a;
    require(rate < 1.0, "dropout: rate must be < 1");
    const Tensor& av = nodes_[a].value;
    std::vector<double> factors(av.size());
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < factors.size(); ++i) {
        factors[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    }
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factors[i];
    return push(std::move(out), needs(a), [a, factors = std::move(factors)](Graph& g, const Tensor& gr) {
        Tensor da = gr;
        for (std::size_t i = 0; i < da.size(); ++i) da[i] *= factors[i];
        g.accumulate(a, da);
    });
}

NodeId Graph::batchnorm_cols(NodeId x, NodeId gamma, NodeId beta, BatchNormState& state,
                             bool training) {
    const Tensor& xv = nodes_[x].value;
    require(xv.rank() == 2, "batchnorm_cols: operand must be rank-2");
    const std::size_t rows = xv.dim(0), cols = xv.dim(1);
    const Tensor& gv = nodes_[gamma].value;
    const Tensor& bv = nodes_[beta].value;
    require(gv.size() == cols && bv.size() == cols, "batchnorm_cols: gamma/beta length mismatch");

    std::vector<double> mean(cols, 0.0), var(cols, 0.0), inv_std(cols, 0.0);
    if (training) {
        for (std::size_t j = 0; j < cols; ++j) {
            double m = 0.0;
            for (std::size_t i = 0; i < rows; ++i) m += xv[i * cols + j];
            m /= static_cast<double>(rows);
            double v = 0.0;
            for (std::size_t i = 0; i < rows; ++i) {
                const double d = xv[i * cols + j] - m;
                v += d * d;
            }
            v /= static_cast<double>(rows);
            mean[j] = m;
            var[j] = v;
        }
        if (!state.initialized) {
            state.mean = Tensor({cols}, mean);
            state.var = Tensor({cols}, var);
            state.initialized = true;
        } else {
            for (std::size_t j = 0; j < cols; ++j) {
                state.mean[j] = (1.0 - kBnMomentum) * state.mean[j] + kBnMomentum * mean[j];
                state.var[j] = (1.0 - kBnMomentum) * state.var[j] + kBnMomentum * var[j];
            }
        }
    } else {
        require(state.initialized, "batchnorm_cols: evaluating before any training forward");
        for (std::size_t j = 0; j < cols; ++j) {
            mean[j] = state.mean[j];
            var[j] = state.var[j];
        }
    }
    for (std::size_t j = 0; j < cols; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + kBnEps);

    std::vector<double> xhat(rows * cols);
    Tensor out({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            const double h = (xv[i * cols + j] - mean[j]) * inv_std[j];
            xhat[i * cols + j] = h;
            out[i * cols + j] = gv[j] * h + bv[j];
        }
    }

    const bool ng = needs(x) || needs(gamma) || needs(beta);
    return push(std::move(out), ng,
                [x, gamma, beta, rows, cols, training, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](Graph& g, const Tensor& gr) {
                    const Tensor& gv = g.nodes_[gamma].value;
                    if (g.needs(beta)) {
                        Tensor db = Tensor::zeros({cols});
                        for (std::size_t i = 0; i < rows; ++i)
                            for (std::size_t j = 0; j < cols; ++j) db[j] += gr[i * cols + j];
                        g.accumulate(beta, db);
                    }
                    if (g.needs(gamma)) {
                        Tensor dg = Tensor::zeros({cols});
                        for (std::size_t i = 0; i < rows; ++i)
                            for (std::size_t j = 0; j < cols; ++j)
                                dg[j] += gr[i * cols + j] * xhat[i * cols + j];
                        g.accumulate(gamma, dg);
                    }
                    if (g.needs(x)) {
                        Tensor dx = Tensor::zeros({rows, cols});
                        if (training) {
                            // dxhat = gr * gamma; dx = inv_std * (dxhat - mean(dxhat)
                            //         - xhat * mean(dxhat .* xhat)), means over rows.
                            for (std::size_t j = 0; j < cols; ++j) {
                                double s1 = 0.0, s2 = 0.0;
                                for (std::size_t i = 0; i < rows; ++i) {
                                    const double dh = gr[i * cols + j] * gv[j];
                                    s1 += dh;
                                    s2 += dh * xhat[i * cols + j];
                                }
                                s1 /= static_cast<double>(rows);
                                s2 /= static_cast<double>(rows);
                                for (std::size_t i = 0; i < rows; ++i) {
                                    const double dh = gr[i * cols + j] * gv[j];
                                    dx[i * cols + j] = inv_std[j] * (dh - s1 - xhat[i * cols + j] * s2);
                                }
                            }
                        } else {
                            for (std::size_t i = 0; i < rows; ++i)
                                for (std::size_t j = 0; j < cols; ++j)
                                    dx[i * cols + j] = gr[i * cols + j] * gv[j] * inv_std[j];
                        }
                        g.accumulate(x, dx);
                    }
                });
}

NodeId Graph::reshape(NodeId a, std::vector<std::size_t> shape) {
    Tensor out = nodes_[a].value.reshaped(shape);
    return push(std::move(out), needs(a), [a](Graph& g, const Tensor& gr) {
        Tensor da = gr.reshaped(g.nodes_[a].value.shape());
        g.accumulate(a, da);
    });
}

NodeId Graph::stack_cols(const std::vector<NodeId>& cols) {
    require(!cols.empty(), "stack_cols: no columns");
    const std::size_t n = nodes_[cols[0]].value.size();
    const std::size_t m = cols.size();
    bool ng = false;
    for (NodeId c : cols) {
        require(nodes_[c].value.size() == n, "stack_cols: column length mismatch");
        ng = ng || needs(c);
    }
    Tensor out({n, m});
    for (std::size_t j = 0; j < m; ++j) {
        const Tensor& cv = nodes_[cols[j]].value;
        for (std::size_t i = 0; i < n; ++i) out[i * m + j] = cv[i];
    }
    return push(std::move(out), ng, [cols, n, m](Graph& g, const Tensor& gr) {
        for (std::size_t j = 0; j < m; ++j) {
            if (!g.needs(cols[j])) continue;
            Tensor dc = Tensor::zeros(g.nodes_[cols[j]].value.shape());
            for (std::size_t i = 0; i < n; ++i) dc[i] = gr[i * m + j];
            g.accumulate(cols[j], dc);
        }
    });
}

NodeId Graph::nbm_project(NodeId h, NodeId w, std::size_t steps) {
    const Tensor& hv = nodes_[h].value;
    const Tensor& wv = nodes_[w].value;
    require(hv.rank() == 2 && wv.rank() == 2, "nbm_project: operands must be rank-2");
    const std::size_t m = wv.dim(0), b = wv.dim(1);
    require(hv.dim(0) == steps * m, "nbm_project: basis row count " + std::to_string(hv.dim(0)) +
                                        " != steps*features " + std::to_string(steps * m));
    require(hv.dim(1) == b, "nbm_project: basis width mismatch");
    Tensor out({steps, m});
    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t j = 0; j < m; ++j) {
            const double* hrow = hv.data().data() + (t * m + j) * b;
            const double* wrow = wv.data().data() + j * b;
            double acc = 0.0;
            for (std::size_t k = 0; k < b; ++k) acc += hrow[k] * wrow[k];
            out[t * m + j] = acc;
        }
    }
    return push(std::move(out), needs(h) || needs(w), [h, w, steps, m, b](Graph& g, const Tensor& gr) {
        const Tensor& hv = g.nodes_[h].value;
        const Tensor& wv = g.nodes_[w].value;
        if (g.needs(h)) {
            Tensor dh = Tensor::zeros({steps * m, b});
            for (std::size_t t = 0; t < steps; ++t)
                for (std::size_t j = 0; j < m; ++j) {
                    const double gval = gr[t * m + j];
                    double* drow = dh.data().data() + (t * m + j) * b;
                    const double* wrow = wv.data().data() + j * b;
                    for (std::size_t k = 0; k < b; ++k) drow[k] = gval * wrow[k];
                }
            g.accumulate(h, dh);
        }
        if (g.needs(w)) {
            Tensor dw = Tensor::zeros({m, b});
            for (std::size_t t = 0; t < steps; ++t)
                for (std::size_t j = 0; j < m; ++j) {
                    const double gval = gr[t * m + j];
                    double* drow = dw.data().data() + j * b;
                    const double* hrow = hv.data().data() + (t * m + j) * b;
                    for (std::size_t k = 0; k < b; ++k) drow[k] += gval * hrow[k];
                }
            g.accumulate(w, dw);
        }
    });
}

NodeId Graph::sum_all(NodeId a) {
    const Tensor& av = nodes_[a].value;
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
    return push(Tensor::scalar(s), needs(a), [a](Graph& g, const Tensor& gr) {
        Tensor da = Tensor::full(g.nodes_[a].value.shape(), gr[0]);
        g.accumulate(a, da);
    });
}

NodeId Graph::mse_sum(NodeId pred, Tensor target) {
    const Tensor& pv = nodes_[pred].value;
    require(pv.size() == target.size(), "mse_sum: prediction/target size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const double d = pv[i] - target[i];
        s += d * d;
    }
    return push(Tensor::scalar(s), needs(pred),
                [pred, target = std::move(target)](Graph& g, const Tensor& gr) {
                    const Tensor& pv = g.nodes_[pred].value;
                    Tensor dp = Tensor::zeros(pv.shape());
                    for (std::size_t i = 0; i < pv.size(); ++i)
                        dp[i] = 2.0 * (pv[i] - target[i]) * gr[0];
                    g.accumulate(pred, dp);
                });
}

NodeId Graph::bce_logits_sum(NodeId logits, Tensor target) {
    const Tensor& lv = nodes_[logits].value;
    require(lv.size() == target.size(), "bce_logits_sum: logits/target size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < lv.size(); ++i) {
        const double x = lv[i];
        s += std::max(x, 0.0) - x * target[i] + std::log1p(std::exp(-std::abs(x)));
    }
    return push(Tensor::scalar(s), needs(logits),
                [logits, target = std::move(target)](Graph& g, const Tensor& gr) {
                    const Tensor& lv = g.nodes_[logits].value;
                    Tensor dl = Tensor::zeros(lv.shape());
                    for (std::size_t i = 0; i < lv.size(); ++i) {
                        const double sig = 1.0 / (1.0 + std::exp(-lv[i]));
                        dl[i] = (sig - target[i]) * gr[0];
                    }
                    g.accumulate(logits, dl);
                });
}

NodeId Graph::ce_logits_sum(NodeId logits, std::vector<std::size_t> labels) {
    const Tensor& lv = nodes_[logits].value;
    require(lv.rank() == 2, "ce_logits_sum: logits must be rank-2");
    const std::size_t rows = lv.dim(0), cols = lv.dim(1);
    require(labels.size() == rows, "ce_logits_sum: label count mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        require(labels[i] < cols, "ce_logits_sum: label out of range");
        double mx = lv[i * cols];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, lv[i * cols + j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < cols; ++j) denom += std::exp(lv[i * cols + j] - mx);
        s += mx + std::log(denom) - lv[i * cols + labels[i]];
    }
    return push(Tensor::scalar(s), needs(logits),
                [logits, rows, cols, labels = std::move(labels)](Graph& g, const Tensor& gr) {
                    const Tensor& lv = g.nodes_[logits].value;
                    Tensor dl = Tensor::zeros(lv.shape());
                    for (std::size_t i = 0; i < rows; ++i) {
                        double mx = lv[i * cols];
                        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, lv[i * cols + j]);
                        double denom = 0.0;
                        for (std::size_t j = 0; j < cols; ++j)
                            denom += std::exp(lv[i * cols + j] - mx);
                        for (std::size_t j = 0; j < cols; ++j) {
                            double p = std::exp(lv[i * cols + j] - mx) / denom;
                            if (j == labels[i]) p -= 1.0;
                            dl[i * cols + j] = p * gr[0];
                        }
                    }
                    g.accumulate(logits, dl);
                });
}

void Graph::backward(NodeId output) {
    const Node& out = nodes_[output];
    if (!out.value.is_scalar()) {
        throw std::invalid_argument("backward: output must be scalar, got shape " +
                                    out.value.shape_str());
    }
    if (out.needs_grad) {
        nodes_[output].grad = Tensor::scalar(1.0);
    }
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.empty() || !n.back) continue;
        n.back(*this, n.grad);
    }
    // Contract: every parameter owns a gradient buffer afterwards, even when
    // it is unreachable from the output.
    for (Node& n : nodes_) {
        if (n.is_param && n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    }
}

} // namespace gatsm
