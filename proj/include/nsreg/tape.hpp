#pragma once

#include "nsreg/param.hpp"
#include "nsreg/types.hpp"

#include <functional>
#include <memory>
#include <utility>
#include <vector>

namespace nsreg::ad {

// Reverse-mode tape restricted to the operator set the model needs.
// Values are dense doubles; gradients accumulate additively on reuse.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Matrix value;
    Matrix grad;  // allocated lazily by accum()
    bool requires_grad = false;
    std::size_t order = 0;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;  // pushes this->grad into parents

    void accum(const Matrix& g) {
        if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
        grad += g;
    }
};

class Tape {
public:
    Var constant(Matrix v) { return make(std::move(v), false); }

    Var leaf(Matrix v) { return make(std::move(v), true); }

    /// Leaf bound to a ParamGroup; backward() adds into the group's grad.
    Var param(ParamGroup& g) {
        Var n = make(g.value, true);
        bindings_.emplace_back(n, &g);
        return n;
    }

    Var matmul(const Var& a, const Var& b) {
        if (a->value.cols() != b->value.rows()) {
            throw ShapeError("matmul: inner dimensions " + std::to_string(a->value.cols()) +
                             " vs " + std::to_string(b->value.rows()));
        }
        Var out = make(a->value * b->value, a->requires_grad || b->requires_grad);
        out->parents = {a, b};
        out->backward_fn = [a, b](Node& n) {
            if (a->requires_grad) a->accum(n.grad * b->value.transpose());
            if (b->requires_grad) b->accum(a->value.transpose() * n.grad);
        };
        return out;
    }

    Var add(const Var& a, const Var& b) {
        require_shape(b->value, a->value.rows(), a->value.cols(), "add");
        Var out = make(a->value + b->value, a->requires_grad || b->requires_grad);
        out->parents = {a, b};
        out->backward_fn = [a, b](Node& n) {
            if (a->requires_grad) a->accum(n.grad);
            if (b->requires_grad) b->accum(n.grad);
        };
        return out;
    }

    Var sub(const Var& a, const Var& b) {
        require_shape(b->value, a->value.rows(), a->value.cols(), "sub");
        Var out = make(a->value - b->value, a->requires_grad || b->requires_grad);
        out->parents = {a, b};
        out->backward_fn = [a, b](Node& n) {
            if (a->requires_grad) a->accum(n.grad);
            if (b->requires_grad) b->accum(-n.grad);
        };
        return out;
    }

    /// Adds a 1xk row vector to every row of a.
    Var add_rowvec(const Var& a, const Var& row) {
        require_shape(row->value, 1, a->value.cols(), "add_rowvec");
        Var out =
            make(a->value.rowwise() + row->value.row(0), a->requires_grad || row->requires_grad);
        out->parents = {a, row};
        out->backward_fn = [a, row](Node& n) {
            if (a->requires_grad) a->accum(n.grad);
            if (row->requires_grad) row->accum(n.grad.colwise().sum());
        };
        return out;
    }

    /// Subtracts a 1xk row vector from every row of a.
    Var sub_rowvec(const Var& a, const Var& row) {
        require_shape(row->value, 1, a->value.cols(), "sub_rowvec");
        Var out =
            make(a->value.rowwise() - row->value.row(0), a->requires_grad || row->requires_grad);
        out->parents = {a, row};
        out->backward_fn = [a, row](Node& n) {
            if (a->requires_grad) a->accum(n.grad);
            if (row->requires_grad) row->accum(-n.grad.colwise().sum());
        };
        return out;
    }

    Var cwise_mul(const Var& a, const Var& b) {
        require_shape(b->value, a->value.rows(), a->value.cols(), "cwise_mul");
        Var out = make(a->value.cwiseProduct(b->value), a->requires_grad || b->requires_grad);
        out->parents = {a, b};
        out->backward_fn = [a, b](Node& n) {
            if (a->requires_grad) a->accum(n.grad.cwiseProduct(b->value));
            if (b->requires_grad) b->accum(n.grad.cwiseProduct(a->value));
        };
        return out;
    }

    /// k*a + c, elementwise with scalar constants.
    Var affine(const Var& a, double k, double c) {
        Var out = make((k * a->value.array() + c).matrix(), a->requires_grad);
        out->parents = {a};
        out->backward_fn = [a, k](Node& n) {
            if (a->requires_grad) a->accum(k * n.grad);
        };
        return out;
    }

    /// Elementwise product with a constant matrix (e.g. a label mask).
    Var mask(const Var& a, Matrix m) {
        require_shape(m, a->value.rows(), a->value.cols(), "mask");
        Var out = make(a->value.cwiseProduct(m), a->requires_grad);
        out->parents = {a};
        out->backward_fn = [a, m = std::move(m)](Node& n) {
            if (a->requires_grad) a->accum(n.grad.cwiseProduct(m));
        };
        return out;
    }

    Var sigmoid(const Var& a) {
        Matrix s(a->value.rows(), a->value.cols());
        for (Eigen::Index i = 0; i < a->value.size(); ++i) {
            const double x = a->value(i);
            // stable in both tails
            s(i) = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        }
        Var out = make(std::move(s), a->requires_grad);
        out->parents = {a};
        out->backward_fn = [a](Node& n) {
            if (a->requires_grad)
                a->accum(n.grad.cwiseProduct(
                    (n.value.array() * (1.0 - n.value.array())).matrix()));
        };
        return out;
    }

    Var relu(const Var& a) {
        Var out = make(a->value.cwiseMax(0.0), a->requires_grad);
        out->parents = {a};
        out->backward_fn = [a](Node& n) {
            if (a->requires_grad)
                a->accum(n.grad.cwiseProduct(
                    (a->value.array() > 0.0).cast<double>().matrix()));
        };
        return out;
    }

    Var abs(const Var& a) {
        Var out = make(a->value.cwiseAbs(), a->requires_grad);
        out->parents = {a};
        out->backward_fn = [a](Node& n) {
            if (a->requires_grad)
                a->accum(n.grad.cwiseProduct(a->value.array().sign().matrix()));
        };
        return out;
    }

    /// 1/(a + eps), elementwise; a expected non-negative.
    Var reciprocal(const Var& a, double eps) {
        Var out = make((1.0 / (a->value.array() + eps)).matrix(), a->requires_grad);
        out->parents = {a};
        out->backward_fn = [a, eps](Node& n) {
            if (a->requires_grad) {
                Matrix d = (-1.0 / (a->value.array() + eps).square()).matrix();
                a->accum(n.grad.cwiseProduct(d));
            }
        };
        return out;
    }

    Var sum(const Var& a) {
        Var out = make(Matrix::Constant(1, 1, a->value.sum()), a->requires_grad);
        out->parents = {a};
        out->backward_fn = [a](Node& n) {
            if (a->requires_grad)
                a->accum(Matrix::Constant(a->value.rows(), a->value.cols(), n.grad(0, 0)));
        };
        return out;
    }

    Var mean_all(const Var& a) {
        const double inv = 1.0 / static_cast<double>(a->value.size());
        Var out = make(Matrix::Constant(1, 1, a->value.sum() * inv), a->requires_grad);
        out->parents = {a};
        out->backward_fn = [a, inv](Node& n) {
            if (a->requires_grad)
                a->accum(Matrix::Constant(a->value.rows(), a->value.cols(), n.grad(0, 0) * inv));
        };
        return out;
    }

    /// Row sums: (m x k) -> (m x 1).
    Var rowsum(const Var& a) {
        Var out = make(a->value.rowwise().sum(), a->requires_grad);
        out->parents = {a};
        out->backward_fn = [a](Node& n) {
            if (a->requires_grad)
                a->accum(n.grad * Matrix::Ones(1, a->value.cols()));
        };
        return out;
    }

    /// Selects rows of a by index; backward scatter-adds.
    Var gather_rows(const Var& a, std::vector<int> rows) {
        Matrix v(static_cast<Eigen::Index>(rows.size()), a->value.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = a->value.row(rows[i]);
        Var out = make(std::move(v), a->requires_grad);
        out->parents = {a};
        out->backward_fn = [a, rows = std::move(rows)](Node& n) {
            if (!a->requires_grad) return;
            Matrix g = Matrix::Zero(a->value.rows(), a->value.cols());
            for (std::size_t i = 0; i < rows.size(); ++i)
                g.row(rows[i]) += n.grad.row(static_cast<Eigen::Index>(i));
            a->accum(g);
        };
        return out;
    }

    /// Mean over listed rows of a, one output row per list; an empty list
    /// yields a zero row (isolated-node convention).
    Var segment_mean(const Var& a, std::vector<std::vector<int>> lists) {
        Matrix v = Matrix::Zero(static_cast<Eigen::Index>(lists.size()), a->value.cols());
        for (std::size_t i = 0; i < lists.size(); ++i) {
            if (lists[i].empty()) continue;
            for (int r : lists[i]) v.row(static_cast<Eigen::Index>(i)) += a->value.row(r);
            v.row(static_cast<Eigen::Index>(i)) /= static_cast<double>(lists[i].size());
        }
        Var out = make(std::move(v), a->requires_grad);
        out->parents = {a};
        out->backward_fn = [a, lists = std::move(lists)](Node& n) {
            if (!a->requires_grad) return;
            Matrix g = Matrix::Zero(a->value.rows(), a->value.cols());
            for (std::size_t i = 0; i < lists.size(); ++i) {
                if (lists[i].empty()) continue;
                const double inv = 1.0 / static_cast<double>(lists[i].size());
                for (int r : lists[i]) g.row(r) += inv * n.grad.row(static_cast<Eigen::Index>(i));
            }
            a->accum(g);
        };
        return out;
    }

    /// Mean binary cross-entropy of predicted probabilities p (m x 1) against
    /// soft targets c; p is clamped to [clamp, 1-clamp] before the logs.
    Var mean_soft_bce(const Var& p, Matrix targets, double clamp = 1e-7) {
        require_shape(targets, p->value.rows(), p->value.cols(), "mean_soft_bce targets");
        const double m = static_cast<double>(p->value.size());
        double total = 0.0;
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            const double pc = std::min(std::max(p->value(i), clamp), 1.0 - clamp);
            const double c = targets(i);
            total += -(c * std::log(pc) + (1.0 - c) * std::log(1.0 - pc));
        }
        Var out = make(Matrix::Constant(1, 1, total / m), p->requires_grad);
        out->parents = {p};
        out->backward_fn = [p, targets = std::move(targets), clamp, m](Node& n) {
            if (!p->requires_grad) return;
            Matrix g(p->value.rows(), p->value.cols());
            for (Eigen::Index i = 0; i < p->value.size(); ++i) {
                const double raw = p->value(i);
                if (raw < clamp || raw > 1.0 - clamp) {
                    g(i) = 0.0;  // clamped flat region
                    continue;
                }
                const double c = targets(i);
                g(i) = (raw - c) / (raw * (1.0 - raw)) / m;
            }
            p->accum(n.grad(0, 0) * g);
        };
        return out;
    }

    /// Backpropagates from a scalar loss; flushes bound ParamGroup grads.
    void backward(const Var& loss, double seed = 1.0) {
        if (!loss) throw StateError("backward: null loss");
        if (loss->value.size() != 1) throw StateError("backward: loss is not a scalar");
        loss->accum(Matrix::Constant(1, 1, seed));
        // nodes_ is already in creation (topological) order
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node& n = **it;
            if (n.backward_fn && n.grad.size() != 0 && n.requires_grad) n.backward_fn(n);
        }
        for (auto& [var, group] : bindings_) {
            if (var->grad.size() != 0) group->grad += var->grad;
        }
        done_backward_ = true;
    }

    bool backward_done() const { return done_backward_; }

private:
    Var make(Matrix v, bool requires_grad) {
        Var n = std::make_shared<Node>();
        n->value = std::move(v);
        n->requires_grad = requires_grad;
        n->order = nodes_.size();
        nodes_.push_back(n);
        return n;
    }

    std::vector<Var> nodes_;
    std::vector<std::pair<Var, ParamGroup*>> bindings_;
    bool done_backward_ = false;
};

}  // namespace nsreg::ad
