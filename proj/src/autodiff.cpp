#include "ztrans/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <Eigen/Dense>

#include "ztrans/errors.hpp"

namespace ztrans::ad {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using CEMap = Eigen::Map<const EMat>;

NodeP make_node(std::vector<size_t> shape, std::vector<double> val, std::vector<NodeP> parents) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->val = std::move(val);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    return n;
}

void require_2d(const Tensor& t, const char* op) {
    if (t.shape().size() != 2) throw ShapeError(std::string(op) + ": expected 2-D tensor");
}

void require_1d(const Tensor& t, const char* op) {
    if (t.shape().size() != 1) throw ShapeError(std::string(op) + ": expected 1-D tensor");
}

}  // namespace

Tensor Tensor::leaf(std::vector<size_t> shape, std::vector<double> values, bool requires_grad) {
    size_t expect = 1;
    for (size_t d : shape) expect *= d;
    if (values.size() != expect) throw ShapeError("Tensor::leaf: values length mismatch");
    auto n = make_node(std::move(shape), std::move(values), {});
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::zeros(std::vector<size_t> shape, bool requires_grad) {
    size_t total = 1;
    for (size_t d : shape) total *= d;
    return leaf(std::move(shape), std::vector<double>(total, 0.0), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return leaf({1}, {v}, requires_grad); }

const std::vector<double>& Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("Tensor::item: not a scalar");
    return node_->val[0];
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) throw ShapeError("matmul: inner dimensions differ");
    std::vector<double> out(m * n);
    EMap(out.data(), m, n) = CEMap(a.values().data(), m, k) * CEMap(b.values().data(), k, n);
    auto node = make_node({m, n}, std::move(out), {a.node(), b.node()});
    node->backprop = [m, k, n](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        CEMap g(self.grad.data(), m, n);
        if (pa.requires_grad) {
            pa.ensure_grad();
            EMap(pa.grad.data(), m, k) += g * CEMap(pb.val.data(), k, n).transpose();
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            EMap(pb.grad.data(), k, n) += CEMap(pa.val.data(), m, k).transpose() * g;
        }
    };
    return Tensor(node);
}

Tensor add(const Tensor& a, const Tensor& b) {
    const bool broadcast =
        a.shape().size() == 2 && b.shape().size() == 1 && b.shape()[0] == a.cols();
    if (!broadcast && a.shape() != b.shape()) throw ShapeError("add: shape mismatch");
    std::vector<double> out(a.size());
    if (broadcast) {
        for (size_t i = 0; i < a.rows(); ++i)
            for (size_t j = 0; j < a.cols(); ++j)
                out[i * a.cols() + j] = a.values()[i * a.cols() + j] + b.values()[j];
    } else {
        for (size_t i = 0; i < a.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    }
    auto node = make_node(a.shape(), std::move(out), {a.node(), b.node()});
    node->backprop = [broadcast](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            if (broadcast) {
                size_t cols = pb.val.size();
                for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i % cols] += self.grad[i];
            } else {
                for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i];
            }
        }
    };
    return Tensor(node);
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < a.size(); ++i) out[i] = a.values()[i] * c;
    auto node = make_node(a.shape(), std::move(out), {a.node()});
    node->backprop = [c](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += c * self.grad[i];
    };
    return Tensor(node);
}

Tensor slice_cols(const Tensor& a, size_t start, size_t len) {
    const bool is1d = a.shape().size() == 1;
    const size_t rows = is1d ? 1 : a.rows();
    const size_t cols = is1d ? a.shape()[0] : a.cols();
    if (start + len > cols) throw ShapeError("slice_cols: range exceeds width");
    std::vector<double> out(rows * len);
    for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < len; ++j) out[i * len + j] = a.values()[i * cols + start + j];
    std::vector<size_t> shape = is1d ? std::vector<size_t>{len} : std::vector<size_t>{rows, len};
    auto node = make_node(std::move(shape), std::move(out), {a.node()});
    node->backprop = [rows, cols, start, len](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < rows; ++i)
            for (size_t j = 0; j < len; ++j)
                p.grad[i * cols + start + j] += self.grad[i * len + j];
    };
    return Tensor(node);
}

Tensor slice_head(const Tensor& a, size_t d) { return slice_cols(a, 0, d); }

Tensor slice_rows(const Tensor& a, size_t start, size_t len) {
    require_2d(a, "slice_rows");
    if (start + len > a.rows()) throw ShapeError("slice_rows: range exceeds height");
    const size_t cols = a.cols();
    std::vector<double> out(len * cols);
    std::copy(a.values().begin() + static_cast<long>(start * cols),
              a.values().begin() + static_cast<long>((start + len) * cols), out.begin());
    auto node = make_node({len, cols}, std::move(out), {a.node()});
    node->backprop = [start, len, cols](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < len * cols; ++i) p.grad[start * cols + i] += self.grad[i];
    };
    return Tensor(node);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty input");
    const size_t cols = parts[0].cols();
    size_t rows = 0;
    std::vector<NodeP> parents;
    for (const auto& p : parts) {
        require_2d(p, "concat_rows");
        if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
        rows += p.rows();
        parents.push_back(p.node());
    }
    std::vector<double> out;
    out.reserve(rows * cols);
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    auto node = make_node({rows, cols}, std::move(out), std::move(parents));
    node->backprop = [](Node& self) {
        size_t offset = 0;
        for (auto& pp : self.parents) {
            if (pp->requires_grad) {
                pp->ensure_grad();
                for (size_t i = 0; i < pp->val.size(); ++i) pp->grad[i] += self.grad[offset + i];
            }
            offset += pp->val.size();
        }
    };
    return Tensor(node);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty input");
    const size_t rows = parts[0].rows();
    size_t cols = 0;
    std::vector<NodeP> parents;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols");
        if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
        cols += p.cols();
        parents.push_back(p.node());
    }
    std::vector<double> out(rows * cols);
    size_t col_off = 0;
    for (const auto& p : parts) {
        for (size_t i = 0; i < rows; ++i)
            for (size_t j = 0; j < p.cols(); ++j)
                out[i * cols + col_off + j] = p.values()[i * p.cols() + j];
        col_off += p.cols();
    }
    auto node = make_node({rows, cols}, std::move(out), std::move(parents));
    node->backprop = [rows, cols](Node& self) {
        size_t col_off = 0;
        for (auto& pp : self.parents) {
            size_t pc = pp->val.size() / rows;
            if (pp->requires_grad) {
                pp->ensure_grad();
                for (size_t i = 0; i < rows; ++i)
                    for (size_t j = 0; j < pc; ++j)
                        pp->grad[i * pc + j] += self.grad[i * cols + col_off + j];
            }
            col_off += pc;
        }
    };
    return Tensor(node);
}

Tensor stack_scalars(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("stack_scalars: empty input");
    std::vector<double> out;
    std::vector<NodeP> parents;
    for (const auto& p : parts) {
        if (p.size() != 1) throw ShapeError("stack_scalars: non-scalar element");
        out.push_back(p.values()[0]);
        parents.push_back(p.node());
    }
    auto node = make_node({parts.size()}, std::move(out), std::move(parents));
    node->backprop = [](Node& self) {
        for (size_t i = 0; i < self.parents.size(); ++i) {
            auto& pp = *self.parents[i];
            if (!pp.requires_grad) continue;
            pp.ensure_grad();
            pp.grad[0] += self.grad[i];
        }
    };
    return Tensor(node);
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    require_2d(table, "embedding_lookup");
    const size_t d = table.cols();
    for (int id : ids)
        if (id < 0 || static_cast<size_t>(id) >= table.rows())
            throw ShapeError("embedding_lookup: id out of range");
    std::vector<double> out(ids.size() * d);
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy(table.values().begin() + static_cast<long>(ids[i] * d),
                  table.values().begin() + static_cast<long>((ids[i] + 1) * d),
                  out.begin() + static_cast<long>(i * d));
    auto node = make_node({ids.size(), d}, std::move(out), {table.node()});
    node->backprop = [ids, d](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < ids.size(); ++i)
            for (size_t j = 0; j < d; ++j)
                p.grad[static_cast<size_t>(ids[i]) * d + j] += self.grad[i * d + j];
    };
    return Tensor(node);
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < a.size(); ++i) out[i] = std::max(0.0, a.values()[i]);
    auto node = make_node(a.shape(), std::move(out), {a.node()});
    node->backprop = [](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (p.val[i] > 0.0) p.grad[i] += self.grad[i];
    };
    return Tensor(node);
}

Tensor gelu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        double x = a.values()[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x / M_SQRT2));
    }
    auto node = make_node(a.shape(), std::move(out), {a.node()});
    node->backprop = [](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            double x = p.val[i];
            double cdf = 0.5 * (1.0 + std::erf(x / M_SQRT2));
            double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
            p.grad[i] += self.grad[i] * (cdf + x * pdf);
        }
    };
    return Tensor(node);
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
    require_2d(a, "layer_norm");
    require_1d(gain, "layer_norm");
    require_1d(bias, "layer_norm");
    const size_t rows = a.rows(), cols = a.cols();
    if (gain.size() != cols || bias.size() != cols)
        throw ShapeError("layer_norm: affine width mismatch");

    std::vector<double> out(rows * cols), xhat(rows * cols), inv_std(rows);
    for (size_t i = 0; i < rows; ++i) {
        double mean = 0.0;
        for (size_t j = 0; j < cols; ++j) mean += a.values()[i * cols + j];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            double d = a.values()[i * cols + j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (size_t j = 0; j < cols; ++j) {
            double xh = (a.values()[i * cols + j] - mean) * inv_std[i];
            xhat[i * cols + j] = xh;
            out[i * cols + j] = gain.values()[j] * xh + bias.values()[j];
        }
    }
    auto node = make_node({rows, cols}, std::move(out), {a.node(), gain.node(), bias.node()});
    node->backprop = [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        auto& pa = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        if (pg.requires_grad) {
            pg.ensure_grad();
            for (size_t i = 0; i < rows; ++i)
                for (size_t j = 0; j < cols; ++j)
                    pg.grad[j] += self.grad[i * cols + j] * xhat[i * cols + j];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < rows; ++i)
                for (size_t j = 0; j < cols; ++j) pb.grad[j] += self.grad[i * cols + j];
        }
        if (pa.requires_grad) {
            pa.ensure_grad();
            const double dn = static_cast<double>(cols);
            for (size_t i = 0; i < rows; ++i) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (size_t j = 0; j < cols; ++j) {
                    double gy = self.grad[i * cols + j] * pg.val[j];
                    sum_g += gy;
                    sum_gx += gy * xhat[i * cols + j];
                }
                for (size_t j = 0; j < cols; ++j) {
                    double gy = self.grad[i * cols + j] * pg.val[j];
                    pa.grad[i * cols + j] +=
                        inv_std[i] * (gy - sum_g / dn - xhat[i * cols + j] * sum_gx / dn);
                }
            }
        }
    };
    return Tensor(node);
}

namespace {

std::pair<size_t, size_t> rowwise_dims(const Tensor& a) {
    if (a.shape().size() == 1) return {size_t{1}, a.shape()[0]};
    return {a.rows(), a.cols()};
}

}  // namespace

Tensor softmax_rows(const Tensor& a) {
    auto [rows, cols] = rowwise_dims(a);
    std::vector<double> out(rows * cols);
    for (size_t i = 0; i < rows; ++i) {
        double mx = a.values()[i * cols];
        for (size_t j = 1; j < cols; ++j) mx = std::max(mx, a.values()[i * cols + j]);
        double denom = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            out[i * cols + j] = std::exp(a.values()[i * cols + j] - mx);
            denom += out[i * cols + j];
        }
        for (size_t j = 0; j < cols; ++j) out[i * cols + j] /= denom;
    }
    auto node = make_node(a.shape(), std::move(out), {a.node()});
    node->backprop = [rows, cols](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < rows; ++i) {
            double dot = 0.0;
            for (size_t j = 0; j < cols; ++j)
                dot += self.grad[i * cols + j] * self.val[i * cols + j];
            for (size_t j = 0; j < cols; ++j)
                p.grad[i * cols + j] +=
                    self.val[i * cols + j] * (self.grad[i * cols + j] - dot);
        }
    };
    return Tensor(node);
}

Tensor log_softmax_rows(const Tensor& a) {
    auto [rows, cols] = rowwise_dims(a);
    std::vector<double> out(rows * cols);
    for (size_t i = 0; i < rows; ++i) {
        double mx = a.values()[i * cols];
        for (size_t j = 1; j < cols; ++j) mx = std::max(mx, a.values()[i * cols + j]);
        double denom = 0.0;
        for (size_t j = 0; j < cols; ++j) denom += std::exp(a.values()[i * cols + j] - mx);
        double lse = mx + std::log(denom);
        for (size_t j = 0; j < cols; ++j) out[i * cols + j] = a.values()[i * cols + j] - lse;
    }
    auto node = make_node(a.shape(), std::move(out), {a.node()});
    node->backprop = [rows, cols](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < rows; ++i) {
            double gsum = 0.0;
            for (size_t j = 0; j < cols; ++j) gsum += self.grad[i * cols + j];
            for (size_t j = 0; j < cols; ++j)
                p.grad[i * cols + j] +=
                    self.grad[i * cols + j] - std::exp(self.val[i * cols + j]) * gsum;
        }
    };
    return Tensor(node);
}

Tensor mean_over_rows(const Tensor& a) {
    require_2d(a, "mean_over_rows");
    const size_t rows = a.rows(), cols = a.cols();
    if (rows == 0) throw ShapeError("mean_over_rows: empty input");
    std::vector<double> out(cols, 0.0);
    for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < cols; ++j) out[j] += a.values()[i * cols + j];
    for (size_t j = 0; j < cols; ++j) out[j] /= static_cast<double>(rows);
    auto node = make_node({cols}, std::move(out), {a.node()});
    node->backprop = [rows, cols](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < rows; ++i)
            for (size_t j = 0; j < cols; ++j)
                p.grad[i * cols + j] += self.grad[j] / static_cast<double>(rows);
    };
    return Tensor(node);
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const size_t rows = a.rows(), cols = a.cols();
    std::vector<double> out(rows * cols);
    for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < cols; ++j) out[j * rows + i] = a.values()[i * cols + j];
    auto node = make_node({cols, rows}, std::move(out), {a.node()});
    node->backprop = [rows, cols](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < rows; ++i)
            for (size_t j = 0; j < cols; ++j) p.grad[i * cols + j] += self.grad[j * rows + i];
    };
    return Tensor(node);
}

Tensor reshape(const Tensor& a, std::vector<size_t> shape) {
    size_t total = 1;
    for (size_t d : shape) total *= d;
    if (total != a.size()) throw ShapeError("reshape: element count mismatch");
    auto node = make_node(std::move(shape), a.values(), {a.node()});
    node->backprop = [](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    };
    return Tensor(node);
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    auto node = make_node({1}, {total}, {a.node()});
    node->backprop = [](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[0];
    };
    return Tensor(node);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch");
    std::vector<double> out(a.size());
    for (size_t i = 0; i < a.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    auto node = make_node(a.shape(), std::move(out), {a.node(), b.node()});
    node->backprop = [](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pa.grad[i] += self.grad[i] * pb.val[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pb.grad[i] += self.grad[i] * pa.val[i];
        }
    };
    return Tensor(node);
}

Tensor cosine_sim(const Tensor& a, const Tensor& b) {
    require_1d(a, "cosine_sim");
    require_1d(b, "cosine_sim");
    if (a.size() != b.size()) throw ShapeError("cosine_sim: length mismatch");
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a.values()[i] * b.values()[i];
        na2 += a.values()[i] * a.values()[i];
        nb2 += b.values()[i] * b.values()[i];
    }
    if (na2 == 0.0 || nb2 == 0.0) throw DegenerateInput("cosine_sim: zero-norm input");
    double na = std::sqrt(na2), nb = std::sqrt(nb2);
    double cosv = dot / (na * nb);
    auto node = make_node({1}, {cosv}, {a.node(), b.node()});
    node->backprop = [dot, na, nb, na2, nb2, cosv](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        double g = self.grad[0];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < pa.val.size(); ++i)
                pa.grad[i] += g * (pb.val[i] / (na * nb) - cosv * pa.val[i] / na2);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < pb.val.size(); ++i)
                pb.grad[i] += g * (pa.val[i] / (na * nb) - cosv * pb.val[i] / nb2);
        }
    };
    return Tensor(node);
}

Tensor logsumexp(const Tensor& v) {
    require_1d(v, "logsumexp");
    double mx = v.values()[0];
    for (double x : v.values()) mx = std::max(mx, x);
    double denom = 0.0;
    for (double x : v.values()) denom += std::exp(x - mx);
    double lse = mx + std::log(denom);
    auto node = make_node({1}, {lse}, {v.node()});
    node->backprop = [lse](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < p.val.size(); ++i)
            p.grad[i] += self.grad[0] * std::exp(p.val[i] - lse);
    };
    return Tensor(node);
}

Tensor nll_smoothed_sum(const Tensor& log_probs, const std::vector<int>& targets,
                        double smoothing) {
    require_2d(log_probs, "nll_smoothed_sum");
    const size_t rows = log_probs.rows(), vocab = log_probs.cols();
    if (targets.size() != rows) throw ShapeError("nll_smoothed_sum: target count mismatch");
    for (int t : targets)
        if (t < 0 || static_cast<size_t>(t) >= vocab)
            throw ShapeError("nll_smoothed_sum: target id out of range");
    const double on = 1.0 - smoothing;
    const double off = smoothing / static_cast<double>(vocab);
    double loss = 0.0;
    for (size_t i = 0; i < rows; ++i) {
        loss -= on * log_probs.values()[i * vocab + static_cast<size_t>(targets[i])];
        for (size_t j = 0; j < vocab; ++j) loss -= off * log_probs.values()[i * vocab + j];
    }
    auto node = make_node({1}, {loss}, {log_probs.node()});
    node->backprop = [targets, vocab, on, off](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        double g = self.grad[0];
        for (size_t i = 0; i < targets.size(); ++i) {
            p.grad[i * vocab + static_cast<size_t>(targets[i])] -= g * on;
            for (size_t j = 0; j < vocab; ++j) p.grad[i * vocab + j] -= g * off;
        }
    };
    return Tensor(node);
}

void backward(const Tensor& root) {
    if (root.size() != 1) throw Error("backward: root must be a scalar");
    // iterative post-order DFS for topological order
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    std::unordered_set<Node*> on_path;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* child = n->parents[idx++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    root.node()->ensure_grad();
    root.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        n->ensure_grad();
        if (n->backprop && n->requires_grad) n->backprop(*n);
    }
}

double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point,
                  double step) {
    if (!(step > 0.0)) throw InvalidInput("grad_check: step must be positive");
    Tensor x = Tensor::leaf(point.shape(), point.values(), /*requires_grad=*/true);
    Tensor y = fn(x);
    backward(y);
    std::vector<double> analytic = x.grad();

    double worst = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        std::vector<double> vals = point.values();
        vals[i] += step;
        double up = fn(Tensor::leaf(point.shape(), vals)).item();
        vals[i] -= 2.0 * step;
        double down = fn(Tensor::leaf(point.shape(), vals)).item();
        double fd = (up - down) / (2.0 * step);
        double denom = std::max(1e-8, std::max(std::fabs(fd), std::fabs(analytic[i])));
        worst = std::max(worst, std::fabs(fd - analytic[i]) / denom);
    }
    return worst;
}

}  // namespace ztrans::ad
