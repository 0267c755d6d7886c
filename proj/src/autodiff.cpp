#include "protomap/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace protomap {

namespace {

void ensure_grad(Node& n) {
    if (n.grad.size() != n.value.size()) {
        n.grad = Tensor::zeros(n.value.shape());
    }
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents) {
        if (p.requires_grad()) needs = true;
    }
    node->requires_grad = needs;
    if (needs) {
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backprop = std::move(backprop);
    }
    return Var(node);
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value())) {
        raise(ErrorKind::dimension,
              std::string(op) + ": shape mismatch " + a.value().shape_string() + " vs " +
                  b.value().shape_string());
    }
}

}  // namespace

Var Var::constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(node);
}

Var Var::parameter(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    node->is_leaf = true;
    return Var(node);
}

void backward(const Var& loss) {
    if (!loss.defined() || loss.value().size() != 1) {
        raise(ErrorKind::usage, "backward requires a defined scalar loss node");
    }
    if (!loss.requires_grad()) {
        raise(ErrorKind::usage, "backward called with no trainable parameters on the tape");
    }

    // iterative DFS topological order over the requires_grad subgraph
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            Node* parent = node->parents[next_child++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (n->is_leaf) {
            ensure_grad(*n);
        } else {
            n->grad = Tensor::zeros(n->value.shape());
        }
    }
    loss.node()->grad[0] = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) {
            for (auto& p : n->parents) {
                if (p->requires_grad) ensure_grad(*p);
            }
            n->backprop(*n);
        }
    }
}

void zero_grad(std::vector<Var>& params) {
    for (auto& p : params) {
        if (p.defined()) p.node()->grad = Tensor::zeros(p.value().shape());
    }
}

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (pa.requires_grad) pa.grad[i] += self.grad[i];
            if (pb.requires_grad) pb.grad[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (pa.requires_grad) pa.grad[i] += self.grad[i];
            if (pb.requires_grad) pb.grad[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.value[i];
            if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.value[i];
        }
    });
}

Var divide(const Var& a, const Var& b) {
    check_same_shape(a, b, "divide");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double inv_b = 1.0 / pb.value[i];
            if (pa.requires_grad) pa.grad[i] += self.grad[i] * inv_b;
            if (pb.requires_grad) pb.grad[i] -= self.grad[i] * self.value[i] * inv_b;
        }
    });
}

Var affine(const Var& a, double scale, double shift) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * out[i] + shift;
    return make_node(std::move(out), {a}, [scale](Node& self) {
        auto& pa = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += scale * self.grad[i];
    });
}

Var mul_const(const Var& a, const Tensor& weight) {
    if (!a.value().same_shape(weight)) {
        raise(ErrorKind::dimension, "mul_const: shape mismatch");
    }
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= weight[i];
    return make_node(std::move(out), {a}, [weight](Node& self) {
        auto& pa = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * weight[i];
    });
}

Var relu(const Var& a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
    return make_node(std::move(out), {a}, [](Node& self) {
        auto& pa = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (pa.value[i] > 0.0) pa.grad[i] += self.grad[i];
        }
    });
}

Var sigmoid(const Var& a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = out[i];
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return make_node(std::move(out), {a}, [](Node& self) {
        auto& pa = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.value[i];
            pa.grad[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

Var tanh(const Var& a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    return make_node(std::move(out), {a}, [](Node& self) {
        auto& pa = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.value[i];
            pa.grad[i] += self.grad[i] * (1.0 - y * y);
        }
    });
}

Var exp(const Var& a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
    return make_node(std::move(out), {a}, [](Node& self) {
        auto& pa = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            pa.grad[i] += self.grad[i] * self.value[i];
        }
    });
}

Var log(const Var& a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
    return make_node(std::move(out), {a}, [](Node& self) {
        auto& pa = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            pa.grad[i] += self.grad[i] / pa.value[i];
        }
    });
}

Var square(const Var& a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= out[i];
    return make_node(std::move(out), {a}, [](Node& self) {
        auto& pa = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            pa.grad[i] += self.grad[i] * 2.0 * pa.value[i];
        }
    });
}

Var abs(const Var& a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(out[i]);
    return make_node(std::move(out), {a}, [](Node& self) {
        auto& pa = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = pa.value[i];
            if (x > 0.0) pa.grad[i] += self.grad[i];
            else if (x < 0.0) pa.grad[i] -= self.grad[i];
        }
    });
}

// ---- structure ----

Var linear(const Var& x, const Var& w, const Var& b) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    if (xv.ndim() != 2 || wv.ndim() != 2 || xv.cols() != wv.cols() || bv.size() != wv.rows()) {
        raise(ErrorKind::dimension,
              "linear: incompatible shapes x" + xv.shape_string() + " w" + wv.shape_string() +
                  " b" + bv.shape_string());
    }
    const std::size_t batch = xv.rows(), in = xv.cols(), out_dim = wv.rows();
    Tensor out({batch, out_dim});
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t o = 0; o < out_dim; ++o) {
            double acc = bv[o];
            for (std::size_t i = 0; i < in; ++i) acc += xv.at(n, i) * wv.at(o, i);
            out.at(n, o) = acc;
        }
    }
    return make_node(std::move(out), {x, w, b}, [batch, in, out_dim](Node& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t o = 0; o < out_dim; ++o) {
                const double g = self.grad.at(n, o);
                if (g == 0.0) continue;
                if (pb.requires_grad) pb.grad[o] += g;
                for (std::size_t i = 0; i < in; ++i) {
                    if (px.requires_grad) px.grad.at(n, i) += g * pw.value.at(o, i);
                    if (pw.requires_grad) pw.grad.at(o, i) += g * px.value.at(n, i);
                }
            }
        }
    });
}

Var row_softmax(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 2) raise(ErrorKind::dimension, "row_softmax expects a 2-d tensor");
    const std::size_t batch = xv.rows(), dim = xv.cols();
    Tensor out({batch, dim});
    for (std::size_t n = 0; n < batch; ++n) {
        // max-subtraction for overflow safety
        double mx = xv.at(n, 0);
        for (std::size_t j = 1; j < dim; ++j) mx = std::max(mx, xv.at(n, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double e = std::exp(xv.at(n, j) - mx);
            out.at(n, j) = e;
            denom += e;
        }
        for (std::size_t j = 0; j < dim; ++j) out.at(n, j) /= denom;
    }
    return make_node(std::move(out), {x}, [batch, dim](Node& self) {
        auto& px = *self.parents[0];
        for (std::size_t n = 0; n < batch; ++n) {
            double dot = 0.0;
            for (std::size_t j = 0; j < dim; ++j) dot += self.grad.at(n, j) * self.value.at(n, j);
            for (std::size_t j = 0; j < dim; ++j) {
                px.grad.at(n, j) += self.value.at(n, j) * (self.grad.at(n, j) - dot);
            }
        }
    });
}

Var slice_cols(const Var& x, std::size_t c0, std::size_t c1) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 2 || c0 >= c1 || c1 > xv.cols()) {
        raise(ErrorKind::dimension, "slice_cols: bad column range");
    }
    const std::size_t batch = xv.rows(), width = c1 - c0;
    Tensor out({batch, width});
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t j = 0; j < width; ++j) out.at(n, j) = xv.at(n, c0 + j);
    }
    return make_node(std::move(out), {x}, [batch, width, c0](Node& self) {
        auto& px = *self.parents[0];
        for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t j = 0; j < width; ++j) px.grad.at(n, c0 + j) += self.grad.at(n, j);
        }
    });
}

Var concat_cols(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.ndim() != 2 || bv.ndim() != 2 || av.rows() != bv.rows()) {
        raise(ErrorKind::dimension, "concat_cols: row counts differ");
    }
    const std::size_t batch = av.rows(), wa = av.cols(), wb = bv.cols();
    Tensor out({batch, wa + wb});
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t j = 0; j < wa; ++j) out.at(n, j) = av.at(n, j);
        for (std::size_t j = 0; j < wb; ++j) out.at(n, wa + j) = bv.at(n, j);
    }
    return make_node(std::move(out), {a, b}, [batch, wa, wb](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t n = 0; n < batch; ++n) {
            if (pa.requires_grad) {
                for (std::size_t j = 0; j < wa; ++j) pa.grad.at(n, j) += self.grad.at(n, j);
            }
            if (pb.requires_grad) {
                for (std::size_t j = 0; j < wb; ++j) pb.grad.at(n, j) += self.grad.at(n, wa + j);
            }
        }
    });
}

Var gather_rows(const Var& x, const std::vector<std::size_t>& rows) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 2) raise(ErrorKind::dimension, "gather_rows expects a 2-d tensor");
    for (std::size_t r : rows) {
        if (r >= xv.rows()) raise(ErrorKind::dimension, "gather_rows: row index out of range");
    }
    const std::size_t dim = xv.cols();
    Tensor out({rows.size(), dim});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < dim; ++j) out.at(i, j) = xv.at(rows[i], j);
    }
    return make_node(std::move(out), {x}, [rows, dim](Node& self) {
        auto& px = *self.parents[0];
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t j = 0; j < dim; ++j) px.grad.at(rows[i], j) += self.grad.at(i, j);
        }
    });
}

Var rows_norm(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 2) raise(ErrorKind::dimension, "rows_norm expects a 2-d tensor");
    const std::size_t batch = xv.rows(), dim = xv.cols();
    Tensor out({batch, 1});
    for (std::size_t n = 0; n < batch; ++n) {
        double acc = 0.0;
        for (std::size_t j = 0; j < dim; ++j) acc += xv.at(n, j) * xv.at(n, j);
        out.at(n, 0) = std::sqrt(acc);
    }
    return make_node(std::move(out), {x}, [batch, dim](Node& self) {
        auto& px = *self.parents[0];
        for (std::size_t n = 0; n < batch; ++n) {
            const double norm = self.value.at(n, 0);
            if (norm == 0.0) continue;
            const double g = self.grad.at(n, 0) / norm;
            for (std::size_t j = 0; j < dim; ++j) px.grad.at(n, j) += g * px.value.at(n, j);
        }
    });
}

// ---- reductions ----

Var sum_all(const Var& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.value().size(); ++i) acc += a.value()[i];
    return make_node(Tensor::scalar(acc), {a}, [](Node& self) {
        auto& pa = *self.parents[0];
        const double g = self.grad[0];
        for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += g;
    });
}

Var mean_all(const Var& a) {
    const std::size_t n = a.value().size();
    if (n == 0) raise(ErrorKind::dimension, "mean_all on empty tensor");
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a.value()[i];
    return make_node(Tensor::scalar(acc / static_cast<double>(n)), {a}, [n](Node& self) {
        auto& pa = *self.parents[0];
        const double g = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += g;
    });
}

Var weighted_sqdist(const Var& h, const Var& p, const Tensor& w) {
    const Tensor& hv = h.value();
    const Tensor& pv = p.value();
    if (hv.ndim() != 2 || pv.ndim() != 2 || hv.cols() != pv.cols()) {
        raise(ErrorKind::dimension, "weighted_sqdist: latent and prototype dims differ");
    }
    const std::size_t batch = hv.rows(), k = pv.rows(), dim = hv.cols();
    if (w.rows() != batch || w.cols() != k) {
        raise(ErrorKind::dimension, "weighted_sqdist: weight shape must be [batch x K]");
    }
    double acc = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t j = 0; j < k; ++j) {
            double d2 = 0.0;
            for (std::size_t m = 0; m < dim; ++m) {
                const double d = hv.at(n, m) - pv.at(j, m);
                d2 += d * d;
            }
            acc += w.at(n, j) * d2;
        }
    }
    return make_node(Tensor::scalar(acc), {h, p}, [batch, k, dim, w](Node& self) {
        auto& ph = *self.parents[0];
        auto& pp = *self.parents[1];
        const double g = self.grad[0];
        for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t j = 0; j < k; ++j) {
                const double c = 2.0 * g * w.at(n, j);
                if (c == 0.0) continue;
                for (std::size_t m = 0; m < dim; ++m) {
                    const double d = ph.value.at(n, m) - pp.value.at(j, m);
                    if (ph.requires_grad) ph.grad.at(n, m) += c * d;
                    if (pp.requires_grad) pp.grad.at(j, m) -= c * d;
                }
            }
        }
    });
}

}  // namespace protomap
