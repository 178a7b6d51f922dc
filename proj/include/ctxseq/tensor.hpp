#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ctxseq/error.hpp"
#include "ctxseq/rng.hpp"

namespace ctxseq {

using Shape = std::vector<int>;

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backfn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

// Dense row-major tensor participating in a dynamically built reverse-mode
// graph. Copies are shallow (shared node); values are treated as immutable
// after construction except for optimizer in-place updates, which stay on
// the single training thread.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor constant(const Shape& shape, double v, bool requires_grad = false);
  static Tensor uniform(const Shape& shape, double lo, double hi, SeededRng& rng,
                        bool requires_grad = false);
  static Tensor gaussian(const Shape& shape, double mu, double sigma, SeededRng& rng,
                         bool requires_grad = false);
  static Tensor of(std::vector<double> data, const Shape& shape, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  int rank() const { return static_cast<int>(node().shape.size()); }
  int extent(int axis) const { return node().shape.at(static_cast<size_t>(axis)); }
  int size() const { return static_cast<int>(node().value.size()); }

  const std::vector<double>& value() const { return node().value; }
  std::vector<double>& value() { return node().value; }
  double item() const;
  double at(int i) const { return node().value.at(static_cast<size_t>(i)); }
  double at(int i, int j) const;

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool b) { node().requires_grad = b; }
  bool has_grad() const { return node().grad.size() == node().value.size(); }
  const std::vector<double>& grad() const;
  std::vector<double>& grad_buffer();
  void zero_grad();

  detail::TensorNode& node() const;
  std::shared_ptr<detail::TensorNode> node_ptr() const { return n_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : n_(std::move(n)) {}
  std::shared_ptr<detail::TensorNode> n_;

  friend Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                        std::function<void(detail::TensorNode&)> backfn, const char* op_name);
};

// While a NoGradGuard is alive on a thread, ops do not record the graph.
// Used for frozen-encoder inference and all evaluation paths.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Debug evaluation mode: every op output is scanned for NaN/Inf.
void set_debug_checks(bool on);
bool debug_checks();

// ---------------------------------------------------------------------------
// Differentiable operations. Binary ops require shape-congruent operands;
// the only broadcast is the documented bias-row broadcast of add_bias_rows.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// m: [R x C], bias: [C]; adds bias to every row.
Tensor add_bias_rows(const Tensor& m, const Tensor& bias);

// a: [m x k], b: [k x n] -> [m x n]; or b: [k] -> [m].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
// Last-axis softmax with max-subtraction; rank 1 or 2.
Tensor softmax(const Tensor& x);
// -log softmax(logits)[target]; gradient is softmax(logits) - onehot(target).
Tensor cross_entropy(const Tensor& logits, int target);

// input: [L x d], bank: [F x h x d], bias: [F] -> [F x (L-h+1)].
// Valid (no-padding) convolution over positions.
Tensor conv_text(const Tensor& input, const Tensor& bank, const Tensor& bias);
// The k largest values in original order, ties broken by earlier position.
// Rank 1 pools the vector; rank 2 pools each row.
Tensor k_max_pool(const Tensor& x, int k);
// Inverted dropout: zero with probability rate, scale survivors by 1/(1-rate).
// Identity in eval mode and at rate 0.
Tensor dropout(const Tensor& x, double rate, SeededRng& rng, bool training);

Tensor concat(const std::vector<Tensor>& parts);               // rank-1 parts
Tensor vcat(const std::vector<Tensor>& blocks);                // rank-2, same cols
Tensor slice(const Tensor& v, int offset, int len);            // rank-1
Tensor stack_rows(const std::vector<Tensor>& rows);            // [n] each -> [T x n]
Tensor row(const Tensor& m, int i);                            // [R x C] -> [C]
// Embedding gather. Rows for zero_id come back as zeros and receive no
// gradient (frozen pad row); pass zero_id = -1 to disable.
Tensor lookup(const Tensor& table, const std::vector<int>& ids, int zero_id = 0);
Tensor pad_rows(const Tensor& m, int before, int after);       // zero rows
Tensor flatten(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);

// Reverse-mode sweep from a scalar loss. Gradients of leaf tensors
// accumulate additively across calls until zero_grad; interior node
// gradients are reset at the start of each sweep.
void backward(const Tensor& loss);

inline size_t shape_numel(const Shape& shape) {
  size_t n = 1;
  for (int e : shape) n *= static_cast<size_t>(e);
  return n;
}

std::string shape_str(const Shape& shape);

}  // namespace ctxseq
