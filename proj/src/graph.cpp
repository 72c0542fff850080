#include "exvae/graph.hpp"

#include <cmath>
#include <limits>

namespace exvae {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

Var Graph::push(Mat val, bool requires_grad, std::function<void(Graph&, int)> back) {
    Node n;
    n.val = std::move(val);
    n.requires_grad = requires_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const Graph::Node& Graph::node(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
        throw ContractError("graph: invalid Var handle");
    return nodes_[static_cast<std::size_t>(v.id)];
}

Var Graph::leaf(Mat value, std::string name) {
    Var v = push(std::move(value), true, nullptr);
    nodes_[static_cast<std::size_t>(v.id)].name = std::move(name);
    return v;
}

Var Graph::constant(Mat value) { return push(std::move(value), false, nullptr); }

const Mat& Graph::value(Var v) const { return node(v).val; }

Mat Graph::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.size() == 0) return Mat::Zero(n.val.rows(), n.val.cols());
    return n.grad;
}

double Graph::scalar(Var v) const {
    const Mat& m = node(v).val;
    if (m.rows() != 1 || m.cols() != 1)
        throw ContractError("graph: scalar() on non-1x1 value");
    return m(0, 0);
}

Mat& Graph::grad_buf(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
    return n.grad;
}

void Graph::accumulate(int id, const Mat& delta) {
    if (!nodes_[static_cast<std::size_t>(id)].requires_grad) return;
    grad_buf(id) += delta;
}

void Graph::check_same_shape(Var a, Var b, const char* op) const {
    const Mat& ma = node(a).val;
    const Mat& mb = node(b).val;
    if (ma.rows() != mb.rows() || ma.cols() != mb.cols())
        throw ContractError(std::string("graph: shape mismatch in ") + op);
}

// ---- elementwise unary ----------------------------------------------------

Var Graph::sigmoid(Var x) {
    Mat v = node(x).val.unaryExpr([](double t) {
        return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
    });
    int xi = x.id;
    return push(std::move(v), node(x).requires_grad, [xi](Graph& g, int self) {
        const Mat& s = g.nodes_[self].val;
        g.accumulate(xi, g.nodes_[self].grad.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
    });
}

Var Graph::tanh_(Var x) {
    Mat v = node(x).val.array().tanh().matrix();
    int xi = x.id;
    return push(std::move(v), node(x).requires_grad, [xi](Graph& g, int self) {
        const Mat& t = g.nodes_[self].val;
        g.accumulate(xi, g.nodes_[self].grad.cwiseProduct((1.0 - t.array().square()).matrix()));
    });
}

Var Graph::softplus(Var x) {
    Mat v = node(x).val.unaryExpr([](double t) {
        return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
    });
    int xi = x.id;
    return push(std::move(v), node(x).requires_grad, [xi](Graph& g, int self) {
        Mat sig = g.nodes_[xi].val.unaryExpr([](double t) {
            return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
        });
        g.accumulate(xi, g.nodes_[self].grad.cwiseProduct(sig));
    });
}

Var Graph::exp_(Var x) {
    Mat v = node(x).val.array().exp().matrix();
    int xi = x.id;
    return push(std::move(v), node(x).requires_grad, [xi](Graph& g, int self) {
        g.accumulate(xi, g.nodes_[self].grad.cwiseProduct(g.nodes_[self].val));
    });
}

Var Graph::log_(Var x) {
    Mat v = node(x).val.array().log().matrix();
    int xi = x.id;
    return push(std::move(v), node(x).requires_grad, [xi](Graph& g, int self) {
        g.accumulate(xi, g.nodes_[self].grad.cwiseQuotient(g.nodes_[xi].val));
    });
}

Var Graph::square(Var x) {
    Mat v = node(x).val.array().square().matrix();
    int xi = x.id;
    return push(std::move(v), node(x).requires_grad, [xi](Graph& g, int self) {
        g.accumulate(xi, g.nodes_[self].grad.cwiseProduct(2.0 * g.nodes_[xi].val));
    });
}

Var Graph::relu(Var x) {
    Mat v = node(x).val.cwiseMax(0.0);
    int xi = x.id;
    return push(std::move(v), node(x).requires_grad, [xi](Graph& g, int self) {
        const Mat mask = (g.nodes_[xi].val.array() > 0.0).cast<double>().matrix();
        g.accumulate(xi, g.nodes_[self].grad.cwiseProduct(mask));
    });
}

Var Graph::clamp(Var x, double lo, double hi) {
    if (!(lo < hi)) throw ContractError("graph: clamp requires lo < hi");
    Mat v = node(x).val.cwiseMax(lo).cwiseMin(hi);
    int xi = x.id;
    return push(std::move(v), node(x).requires_grad, [xi, lo, hi](Graph& g, int self) {
        const auto& xv = g.nodes_[xi].val.array();
        const Mat mask = (xv > lo && xv < hi).cast<double>().matrix();
        g.accumulate(xi, g.nodes_[self].grad.cwiseProduct(mask));
    });
}

Var Graph::scale(Var x, double c) {
    Mat v = c * node(x).val;
    int xi = x.id;
    return push(std::move(v), node(x).requires_grad, [xi, c](Graph& g, int self) {
        g.accumulate(xi, c * g.nodes_[self].grad);
    });
}

Var Graph::add_const(Var x, double c) {
    Mat v = (node(x).val.array() + c).matrix();
    int xi = x.id;
    return push(std::move(v), node(x).requires_grad, [xi](Graph& g, int self) {
        g.accumulate(xi, g.nodes_[self].grad);
    });
}

// ---- binary ---------------------------------------------------------------

Var Graph::add(Var a, Var b) {
    check_same_shape(a, b, "add");
    Mat v = node(a).val + node(b).val;
    int ai = a.id, bi = b.id;
    return push(std::move(v), node(a).requires_grad || node(b).requires_grad,
                [ai, bi](Graph& g, int self) {
                    g.accumulate(ai, g.nodes_[self].grad);
                    g.accumulate(bi, g.nodes_[self].grad);
                });
}

Var Graph::sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    Mat v = node(a).val - node(b).val;
    int ai = a.id, bi = b.id;
    return push(std::move(v), node(a).requires_grad || node(b).requires_grad,
                [ai, bi](Graph& g, int self) {
                    g.accumulate(ai, g.nodes_[self].grad);
                    g.accumulate(bi, -g.nodes_[self].grad);
                });
}

Var Graph::mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    Mat v = node(a).val.cwiseProduct(node(b).val);
    int ai = a.id, bi = b.id;
    return push(std::move(v), node(a).requires_grad || node(b).requires_grad,
                [ai, bi](Graph& g, int self) {
                    g.accumulate(ai, g.nodes_[self].grad.cwiseProduct(g.nodes_[bi].val));
                    g.accumulate(bi, g.nodes_[self].grad.cwiseProduct(g.nodes_[ai].val));
                });
}

Var Graph::affine(Var x, Var w, Var b) {
    const Mat& xv = node(x).val;
    const Mat& wv = node(w).val;
    const Mat& bv = node(b).val;
    if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols())
        throw ContractError("graph: shape mismatch in affine");
    Mat v = xv * wv;
    v.rowwise() += bv.row(0);
    int xi = x.id, wi = w.id, bi = b.id;
    return push(std::move(v),
                node(x).requires_grad || node(w).requires_grad || node(b).requires_grad,
                [xi, wi, bi](Graph& g, int self) {
                    const Mat& dy = g.nodes_[self].grad;
                    g.accumulate(xi, dy * g.nodes_[wi].val.transpose());
                    g.accumulate(wi, g.nodes_[xi].val.transpose() * dy);
                    g.accumulate(bi, dy.colwise().sum());
                });
}

Var Graph::matmul(Var a, Var b) {
    const Mat& av = node(a).val;
    const Mat& bv = node(b).val;
    if (av.cols() != bv.rows()) throw ContractError("graph: shape mismatch in matmul");
    Mat v = av * bv;
    int ai = a.id, bi = b.id;
    return push(std::move(v), node(a).requires_grad || node(b).requires_grad,
                [ai, bi](Graph& g, int self) {
                    const Mat& dy = g.nodes_[self].grad;
                    g.accumulate(ai, dy * g.nodes_[bi].val.transpose());
                    g.accumulate(bi, g.nodes_[ai].val.transpose() * dy);
                });
}

// ---- reductions -----------------------------------------------------------

Var Graph::sum(Var x) {
    Mat v(1, 1);
    v(0, 0) = node(x).val.sum();
    int xi = x.id;
    return push(std::move(v), node(x).requires_grad, [xi](Graph& g, int self) {
        const double d = g.nodes_[self].grad(0, 0);
        g.accumulate(xi, Mat::Constant(g.nodes_[xi].val.rows(), g.nodes_[xi].val.cols(), d));
    });
}

Var Graph::mean(Var x) {
    const double inv = 1.0 / static_cast<double>(node(x).val.size());
    Mat v(1, 1);
    v(0, 0) = node(x).val.sum() * inv;
    int xi = x.id;
    return push(std::move(v), node(x).requires_grad, [xi, inv](Graph& g, int self) {
        const double d = g.nodes_[self].grad(0, 0) * inv;
        g.accumulate(xi, Mat::Constant(g.nodes_[xi].val.rows(), g.nodes_[xi].val.cols(), d));
    });
}

Var Graph::row_sum(Var x) {
    Mat v = node(x).val.rowwise().sum();
    int xi = x.id;
    return push(std::move(v), node(x).requires_grad, [xi](Graph& g, int self) {
        const Mat& dy = g.nodes_[self].grad; // (B,1)
        g.accumulate(xi, dy * Mat::Ones(1, g.nodes_[xi].val.cols()));
    });
}

Var Graph::row_log_sum_exp(Var x) {
    return masked_row_log_sum_exp(x, Mat::Ones(node(x).val.rows(), node(x).val.cols()));
}

Var Graph::masked_row_log_sum_exp(Var x, Mat mask) {
    const Mat& xv = node(x).val;
    if (mask.rows() != xv.rows() || mask.cols() != xv.cols())
        throw ContractError("graph: mask shape mismatch in masked_row_log_sum_exp");

    Mat v(xv.rows(), 1);
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
        double m = kNegInf;
        bool any = false;
        for (Eigen::Index j = 0; j < xv.cols(); ++j)
            if (mask(i, j) != 0.0) {
                any = true;
                m = std::max(m, xv(i, j));
            }
        if (!any)
            throw ContractError("graph: masked_row_log_sum_exp row selects no entries");
        if (m == kNegInf) {
            v(i, 0) = kNegInf;
            continue;
        }
        double acc = 0.0;
        for (Eigen::Index j = 0; j < xv.cols(); ++j)
            if (mask(i, j) != 0.0) acc += std::exp(xv(i, j) - m);
        v(i, 0) = m + std::log(acc);
    }

    int xi = x.id;
    return push(std::move(v), node(x).requires_grad,
                [xi, mask = std::move(mask)](Graph& g, int self) {
                    const Mat& xv = g.nodes_[xi].val;
                    const Mat& out = g.nodes_[self].val;
                    const Mat& dy = g.nodes_[self].grad; // (B,1)
                    Mat dx = Mat::Zero(xv.rows(), xv.cols());
                    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
                        if (!std::isfinite(out(i, 0))) continue;
                        for (Eigen::Index j = 0; j < xv.cols(); ++j)
                            if (mask(i, j) != 0.0)
                                dx(i, j) = dy(i, 0) * std::exp(xv(i, j) - out(i, 0));
                    }
                    g.accumulate(xi, dx);
                });
}

Var Graph::pairwise_sqdist(Var z, Var u) {
    const Mat& zv = node(z).val;
    const Mat& uv = node(u).val;
    if (zv.cols() != uv.cols()) throw ContractError("graph: dimension mismatch in pairwise_sqdist");
    const Eigen::VectorXd z2 = zv.rowwise().squaredNorm();
    const Eigen::VectorXd u2 = uv.rowwise().squaredNorm();
    Mat v = -2.0 * (zv * uv.transpose());
    v.colwise() += z2;
    v.rowwise() += u2.transpose();
    int zi = z.id, ui = u.id;
    return push(std::move(v), node(z).requires_grad || node(u).requires_grad,
                [zi, ui](Graph& g, int self) {
                    const Mat& dy = g.nodes_[self].grad; // (B,M)
                    const Mat& Z = g.nodes_[zi].val;
                    const Mat& U = g.nodes_[ui].val;
                    const Eigen::VectorXd row = dy.rowwise().sum();
                    const Eigen::VectorXd col = dy.colwise().sum();
                    g.accumulate(zi, 2.0 * (row.asDiagonal() * Z - dy * U));
                    g.accumulate(ui, 2.0 * (col.asDiagonal() * U - dy.transpose() * Z));
                });
}

Var Graph::mul_scalar(Var x, Var s) {
    const Mat& sv = node(s).val;
    if (sv.rows() != 1 || sv.cols() != 1) throw ContractError("graph: mul_scalar needs 1x1 scalar");
    Mat v = sv(0, 0) * node(x).val;
    int xi = x.id, si = s.id;
    return push(std::move(v), node(x).requires_grad || node(s).requires_grad,
                [xi, si](Graph& g, int self) {
                    const Mat& dy = g.nodes_[self].grad;
                    const double s = g.nodes_[si].val(0, 0);
                    g.accumulate(xi, s * dy);
                    Mat ds(1, 1);
                    ds(0, 0) = dy.cwiseProduct(g.nodes_[xi].val).sum();
                    g.accumulate(si, ds);
                });
}

Var Graph::add_scalar(Var x, Var s) {
    const Mat& sv = node(s).val;
    if (sv.rows() != 1 || sv.cols() != 1) throw ContractError("graph: add_scalar needs 1x1 scalar");
    Mat v = (node(x).val.array() + sv(0, 0)).matrix();
    int xi = x.id, si = s.id;
    return push(std::move(v), node(x).requires_grad || node(s).requires_grad,
                [xi, si](Graph& g, int self) {
                    const Mat& dy = g.nodes_[self].grad;
                    g.accumulate(xi, dy);
                    Mat ds(1, 1);
                    ds(0, 0) = dy.sum();
                    g.accumulate(si, ds);
                });
}

Var Graph::sub_colvec(Var x, Var c) {
    const Mat& xv = node(x).val;
    const Mat& cv = node(c).val;
    if (cv.cols() != 1 || cv.rows() != xv.rows())
        throw ContractError("graph: sub_colvec needs (B,1) column matching x rows");
    Mat v = xv;
    v.colwise() -= cv.col(0);
    int xi = x.id, ci = c.id;
    return push(std::move(v), node(x).requires_grad || node(c).requires_grad,
                [xi, ci](Graph& g, int self) {
                    const Mat& dy = g.nodes_[self].grad;
                    g.accumulate(xi, dy);
                    g.accumulate(ci, -dy.rowwise().sum());
                });
}

// ---- backward -------------------------------------------------------------

void Graph::backward(Var loss) {
    const Node& ln = node(loss);
    if (ln.val.rows() != 1 || ln.val.cols() != 1)
        throw ContractError("backward: loss must be a 1x1 scalar");

    grad_buf(loss.id)(0, 0) += 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.back || !n.requires_grad || n.grad.size() == 0) continue;
        n.back(*this, id);
    }

    for (const Node& n : nodes_) {
        if (n.name.empty() || n.grad.size() == 0) continue;
        if (!n.grad.allFinite())
            throw NumericError("backward: non-finite gradient in block " + n.name);
    }
}

} // namespace exvae
