#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ztrans::ad {

struct Node;
using NodeP = std::shared_ptr<Node>;

// One recorded primitive application. The DAG of parent links is the
// computation graph; backward() walks it in reverse topological order.
struct Node {
    std::vector<size_t> shape;
    std::vector<double> val;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<NodeP> parents;
    std::function<void(Node&)> backprop;  // accumulates into parents' grad

    size_t size() const {
        size_t s = 1;
        for (size_t d : shape) s *= d;
        return s;
    }
    void ensure_grad() {
        if (grad.size() != size()) grad.assign(size(), 0.0);
    }
};

// Value-semantics handle over a shared graph node.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(NodeP n) : node_(std::move(n)) {}

    static Tensor leaf(std::vector<size_t> shape, std::vector<double> values,
                       bool requires_grad = false);
    static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool valid() const { return node_ != nullptr; }
    const std::vector<size_t>& shape() const { return node_->shape; }
    size_t size() const { return node_->size(); }
    size_t rows() const { return node_->shape.at(0); }
    size_t cols() const { return node_->shape.at(1); }
    const std::vector<double>& values() const { return node_->val; }
    std::vector<double>& values() { return node_->val; }
    const std::vector<double>& grad() const;
    double item() const;
    void clear_grad() { node_->grad.clear(); }
    bool requires_grad() const { return node_->requires_grad; }

    NodeP node() const { return node_; }

  private:
    NodeP node_;
};

// ---- primitives ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);  // same shape, or b a row vector broadcast
Tensor scale(const Tensor& a, double c);
Tensor slice_cols(const Tensor& a, size_t start, size_t len);
Tensor slice_head(const Tensor& a, size_t d);  // first d features of the last axis
Tensor slice_rows(const Tensor& a, size_t start, size_t len);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor stack_scalars(const std::vector<Tensor>& parts);  // -> 1D
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor mean_over_rows(const Tensor& a);  // 2D -> 1D column means
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, std::vector<size_t> shape);
Tensor sum(const Tensor& a);                        // -> scalar
Tensor mul(const Tensor& a, const Tensor& b);       // elementwise
Tensor cosine_sim(const Tensor& a, const Tensor& b);  // 1D x 1D -> scalar
Tensor logsumexp(const Tensor& v);                  // 1D -> scalar
// Sum over rows of label-smoothed negative log-likelihood; caller scales.
Tensor nll_smoothed_sum(const Tensor& log_probs, const std::vector<int>& targets,
                        double smoothing);

// Accumulates gradients on every requires_grad leaf reachable from root.
void backward(const Tensor& root);

// Central finite differences vs. backward(); returns the worst relative
// error with absolute floor 1e-8.
double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point,
                  double step);

}  // namespace ztrans::ad
