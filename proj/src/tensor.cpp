#include "ctxseq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace ctxseq {

namespace {

thread_local bool g_grad_enabled = true;
bool g_debug_checks = false;

void check_shape_valid(const Shape& shape) {
  for (int e : shape) {
    if (e <= 0) throw ShapeError("extent must be positive, got " + shape_str(shape));
  }
}

void check_finite(const std::vector<double>& v, const char* op_name) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value produced by ") + op_name);
    }
  }
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void set_debug_checks(bool on) { g_debug_checks = on; }
bool debug_checks() { return g_debug_checks; }

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

detail::TensorNode& Tensor::node() const {
  if (!n_) throw ContractError("use of undefined tensor");
  return *n_;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
  return node().value[0];
}

double Tensor::at(int i, int j) const {
  const auto& n = node();
  if (n.shape.size() != 2) throw ShapeError("at(i,j) on tensor " + shape_str(n.shape));
  return n.value.at(static_cast<size_t>(i) * n.shape[1] + j);
}

const std::vector<double>& Tensor::grad() const {
  const auto& n = node();
  if (n.grad.size() != n.value.size()) throw ContractError("gradient not populated");
  return n.grad;
}

std::vector<double>& Tensor::grad_buffer() {
  node().ensure_grad();
  return node().grad;
}

void Tensor::zero_grad() {
  auto& n = node();
  n.grad.assign(n.value.size(), 0.0);
}

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(detail::TensorNode&)> backfn, const char* op_name) {
  if (shape_numel(shape) != value.size()) {
    throw ShapeError(std::string(op_name) + ": value size does not match shape");
  }
  if (g_debug_checks) check_finite(value, op_name);
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool track = g_grad_enabled;
  if (track) {
    bool any = false;
    for (const auto& p : parents) any = any || p.node().requires_grad;
    track = any;
  }
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backfn = std::move(backfn);
  }
  return Tensor(std::move(node));
}

namespace {

Tensor make_leaf(Shape shape, std::vector<double> value, bool requires_grad) {
  check_shape_valid(shape);
  if (g_debug_checks) check_finite(value, "leaf");
  Tensor t = make_op(std::move(shape), std::move(value), {}, nullptr, "leaf");
  t.set_requires_grad(requires_grad);
  return t;
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  check_shape_valid(shape);
  return make_leaf(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
}

Tensor Tensor::constant(const Shape& shape, double v, bool requires_grad) {
  check_shape_valid(shape);
  return make_leaf(shape, std::vector<double>(shape_numel(shape), v), requires_grad);
}

Tensor Tensor::uniform(const Shape& shape, double lo, double hi, SeededRng& rng,
                       bool requires_grad) {
  check_shape_valid(shape);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return make_leaf(shape, std::move(v), requires_grad);
}

Tensor Tensor::gaussian(const Shape& shape, double mu, double sigma, SeededRng& rng,
                        bool requires_grad) {
  check_shape_valid(shape);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.gaussian(mu, sigma);
  return make_leaf(shape, std::move(v), requires_grad);
}

Tensor Tensor::of(std::vector<double> data, const Shape& shape, bool requires_grad) {
  check_shape_valid(shape);
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("of(): data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  return make_leaf(shape, std::move(data), requires_grad);
}

Tensor Tensor::scalar(double v) { return make_leaf({1}, {v}, false); }

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.value());
  const auto& bv = b.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
    for (int p = 0; p < 2; ++p) {
      auto& par = *self.parents[p];
      if (!par.requires_grad) continue;
      par.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) par.grad[i] += self.grad[i];
    }
  }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.value());
  const auto& bv = b.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.value());
  const auto& bv = b.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  }, "mul");
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.value());
  for (auto& x : out) x *= s;
  return make_op(a.shape(), std::move(out), {a}, [s](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * s;
  }, "scale");
}

Tensor add_bias_rows(const Tensor& m, const Tensor& bias) {
  if (m.rank() != 2 || bias.rank() != 1 || m.extent(1) != bias.extent(0)) {
    throw ShapeError("add_bias_rows: " + shape_str(m.shape()) + " vs " +
                     shape_str(bias.shape()));
  }
  const int rows = m.extent(0), cols = m.extent(1);
  std::vector<double> out(m.value());
  const auto& bv = bias.value();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[static_cast<size_t>(r) * cols + c] += bv[c];
  return make_op(m.shape(), std::move(out), {m, bias},
                 [rows, cols](detail::TensorNode& self) {
    auto& pm = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pm.requires_grad) {
      pm.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pm.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
          pb.grad[c] += self.grad[static_cast<size_t>(r) * cols + c];
    }
  }, "add_bias_rows");
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2) throw ShapeError("matmul: lhs must be rank 2, got " + shape_str(a.shape()));
  const int m = a.extent(0), k = a.extent(1);
  const bool vec = (b.rank() == 1);
  const int bk = vec ? b.extent(0) : b.extent(0);
  const int n = vec ? 1 : b.extent(1);
  if (!vec && b.rank() != 2) throw ShapeError("matmul: rhs rank " + std::to_string(b.rank()));
  if (bk != k) {
    throw ShapeError("matmul: inner extents " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const double aik = av[static_cast<size_t>(i) * k + kk];
      if (n == 1) {
        out[i] += aik * bv[kk];
      } else {
        const size_t boff = static_cast<size_t>(kk) * n;
        const size_t ooff = static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) out[ooff + j] += aik * bv[boff + j];
      }
    }
  }
  Shape out_shape = vec ? Shape{m} : Shape{m, n};
  return make_op(std::move(out_shape), std::move(out), {a, b},
                 [m, k, n](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {  // dA = g . B^T
      pa.ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
          double acc = 0.0;
          const size_t goff = static_cast<size_t>(i) * n;
          const size_t boff = static_cast<size_t>(kk) * n;
          for (int j = 0; j < n; ++j) acc += g[goff + j] * pb.value[boff + j];
          pa.grad[static_cast<size_t>(i) * k + kk] += acc;
        }
    }
    if (pb.requires_grad) {  // dB = A^T . g
      pb.ensure_grad();
      for (int i = 0; i < m; ++i) {
        const size_t aoff = static_cast<size_t>(i) * k;
        const size_t goff = static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
          const double aik = pa.value[aoff + kk];
          const size_t boff = static_cast<size_t>(kk) * n;
          for (int j = 0; j < n; ++j) pb.grad[boff + j] += aik * g[goff + j];
        }
      }
    }
  }, "matmul");
}

Tensor transpose(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("transpose: rank " + std::to_string(m.rank()));
  const int r = m.extent(0), c = m.extent(1);
  std::vector<double> out(static_cast<size_t>(r) * c);
  const auto& v = m.value();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(j) * r + i] = v[static_cast<size_t>(i) * c + j];
  return make_op({c, r}, std::move(out), {m}, [r, c](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        p.grad[static_cast<size_t>(i) * c + j] += self.grad[static_cast<size_t>(j) * r + i];
  }, "transpose");
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.value());
  for (auto& v : out) v = 1.0 / (1.0 + std::exp(-v));
  return make_op(x.shape(), std::move(out), {x}, [](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      p.grad[i] += self.grad[i] * y * (1.0 - y);
    }
  }, "sigmoid");
}

Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.value());
  for (auto& v : out) v = std::tanh(v);
  return make_op(x.shape(), std::move(out), {x}, [](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      p.grad[i] += self.grad[i] * (1.0 - y * y);
    }
  }, "tanh");
}

Tensor softmax(const Tensor& x) {
  if (x.rank() < 1 || x.rank() > 2) throw ShapeError("softmax: rank " + std::to_string(x.rank()));
  const int cols = x.shape().back();
  const int rows = x.size() / cols;
  std::vector<double> out(x.value());
  for (int r = 0; r < rows; ++r) {
    double* p = out.data() + static_cast<size_t>(r) * cols;
    double mx = p[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, p[c]);
    double z = 0.0;
    for (int c = 0; c < cols; ++c) {
      p[c] = std::exp(p[c] - mx);
      z += p[c];
    }
    for (int c = 0; c < cols; ++c) p[c] /= z;
  }
  return make_op(x.shape(), std::move(out), {x}, [rows, cols](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const size_t off = static_cast<size_t>(r) * cols;
      double dotgy = 0.0;
      for (int c = 0; c < cols; ++c) dotgy += self.grad[off + c] * self.value[off + c];
      for (int c = 0; c < cols; ++c)
        p.grad[off + c] += self.value[off + c] * (self.grad[off + c] - dotgy);
    }
  }, "softmax");
}

Tensor cross_entropy(const Tensor& logits, int target) {
  if (logits.rank() != 1) throw ShapeError("cross_entropy: logits must be rank 1");
  const int n = logits.extent(0);
  if (target < 0 || target >= n) {
    throw IndexError("cross_entropy: target " + std::to_string(target) + " outside [0," +
                     std::to_string(n) + ")");
  }
  const auto& v = logits.value();
  double mx = v[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, v[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += std::exp(v[i] - mx);
  const double loss = mx + std::log(z) - v[target];
  return make_op({1}, {loss}, {logits}, [n, target, mx, z](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    const double g = self.grad[0];
    for (int i = 0; i < n; ++i) {
      double soft = std::exp(p.value[i] - mx) / z;
      if (i == target) soft -= 1.0;
      p.grad[i] += g * soft;
    }
  }, "cross_entropy");
}

// ---------------------------------------------------------------------------
// Text convolution and pooling
// ---------------------------------------------------------------------------

Tensor conv_text(const Tensor& input, const Tensor& bank, const Tensor& bias) {
  if (input.rank() != 2) throw ShapeError("conv_text: input must be [L x d]");
  if (bank.rank() != 3) throw ShapeError("conv_text: bank must be [F x h x d]");
  const int L = input.extent(0), d = input.extent(1);
  const int F = bank.extent(0), h = bank.extent(1), bd = bank.extent(2);
  if (bd != d) {
    throw ShapeError("conv_text: filter width " + std::to_string(bd) +
                     " must equal input width " + std::to_string(d));
  }
  if (bias.rank() != 1 || bias.extent(0) != F) throw ShapeError("conv_text: bias must be [F]");
  if (L < h) {
    throw ShapeError("conv_text: input too short, length " + std::to_string(L) +
                     " < filter height " + std::to_string(h));
  }
  const int T = L - h + 1;
  std::vector<double> out(static_cast<size_t>(F) * T);
  const auto& iv = input.value();
  const auto& wv = bank.value();
  const auto& bv = bias.value();
  for (int f = 0; f < F; ++f) {
    const size_t woff = static_cast<size_t>(f) * h * d;
    for (int t = 0; t < T; ++t) {
      double acc = bv[f];
      for (int j = 0; j < h; ++j) {
        const size_t ioff = static_cast<size_t>(t + j) * d;
        const size_t wrow = woff + static_cast<size_t>(j) * d;
        for (int c = 0; c < d; ++c) acc += iv[ioff + c] * wv[wrow + c];
      }
      out[static_cast<size_t>(f) * T + t] = acc;
    }
  }
  return make_op({F, T}, std::move(out), {input, bank, bias},
                 [L, d, F, h, T](detail::TensorNode& self) {
    auto& pin = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    const auto& g = self.grad;
    if (pin.requires_grad) pin.ensure_grad();
    if (pw.requires_grad) pw.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (int f = 0; f < F; ++f) {
      const size_t woff = static_cast<size_t>(f) * h * d;
      for (int t = 0; t < T; ++t) {
        const double gf = g[static_cast<size_t>(f) * T + t];
        if (gf == 0.0) continue;
        if (pb.requires_grad) pb.grad[f] += gf;
        for (int j = 0; j < h; ++j) {
          const size_t ioff = static_cast<size_t>(t + j) * d;
          const size_t wrow = woff + static_cast<size_t>(j) * d;
          for (int c = 0; c < d; ++c) {
            if (pin.requires_grad) pin.grad[ioff + c] += gf * pw.value[wrow + c];
            if (pw.requires_grad) pw.grad[wrow + c] += gf * pin.value[ioff + c];
          }
        }
      }
    }
    (void)L;
  }, "conv_text");
}

Tensor k_max_pool(const Tensor& x, int k) {
  if (x.rank() < 1 || x.rank() > 2) throw ShapeError("k_max_pool: rank " + std::to_string(x.rank()));
  const int L = x.shape().back();
  const int rows = x.size() / L;
  if (k <= 0 || k > L) {
    throw PoolError("k=" + std::to_string(k) + " outside [1," + std::to_string(L) + "]");
  }
  std::vector<double> out(static_cast<size_t>(rows) * k);
  std::vector<int> picked(static_cast<size_t>(rows) * k);
  const auto& v = x.value();
  std::vector<int> idx(L);
  for (int r = 0; r < rows; ++r) {
    const double* p = v.data() + static_cast<size_t>(r) * L;
    std::iota(idx.begin(), idx.end(), 0);
    // k largest; ties broken by earlier position
    std::stable_sort(idx.begin(), idx.end(), [p](int a, int b) { return p[a] > p[b]; });
    std::vector<int> keep(idx.begin(), idx.begin() + k);
    std::sort(keep.begin(), keep.end());  // original order
    for (int i = 0; i < k; ++i) {
      out[static_cast<size_t>(r) * k + i] = p[keep[i]];
      picked[static_cast<size_t>(r) * k + i] = keep[i];
    }
  }
  Shape out_shape = (x.rank() == 1) ? Shape{k} : Shape{rows, k};
  return make_op(std::move(out_shape), std::move(out), {x},
                 [rows, L, k, picked](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int r = 0; r < rows; ++r)
      for (int i = 0; i < k; ++i)
        p.grad[static_cast<size_t>(r) * L + picked[static_cast<size_t>(r) * k + i]] +=
            self.grad[static_cast<size_t>(r) * k + i];
  }, "k_max_pool");
}

Tensor dropout(const Tensor& x, double rate, SeededRng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  const double inv = 1.0 / keep;
  std::vector<double> mask(x.value().size());
  for (auto& m : mask) m = (rng.next_double() < rate) ? 0.0 : inv;
  std::vector<double> out(x.value());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_op(x.shape(), std::move(out), {x}, [mask](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * mask[i];
  }, "dropout");
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  std::vector<double> out;
  std::vector<int> offsets;
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 1) throw ShapeError("concat: parts must be rank 1");
    offsets.push_back(total);
    total += p.extent(0);
  }
  out.reserve(static_cast<size_t>(total));
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  return make_op({total}, std::move(out), parts, [offsets](detail::TensorNode& self) {
    for (size_t i = 0; i < self.parents.size(); ++i) {
      auto& p = *self.parents[i];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      const size_t off = static_cast<size_t>(offsets[i]);
      for (size_t j = 0; j < p.value.size(); ++j) p.grad[j] += self.grad[off + j];
    }
  }, "concat");
}

Tensor vcat(const std::vector<Tensor>& blocks) {
  if (blocks.empty()) throw ContractError("vcat of zero tensors");
  const int cols = blocks[0].extent(1);
  int rows = 0;
  std::vector<int> offsets;
  for (const auto& b : blocks) {
    if (b.rank() != 2 || b.extent(1) != cols) {
      throw ShapeError("vcat: blocks must be rank 2 with equal column counts");
    }
    offsets.push_back(rows * cols);
    rows += b.extent(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(rows) * cols);
  for (const auto& b : blocks) out.insert(out.end(), b.value().begin(), b.value().end());
  return make_op({rows, cols}, std::move(out), blocks, [offsets](detail::TensorNode& self) {
    for (size_t i = 0; i < self.parents.size(); ++i) {
      auto& p = *self.parents[i];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      const size_t off = static_cast<size_t>(offsets[i]);
      for (size_t j = 0; j < p.value.size(); ++j) p.grad[j] += self.grad[off + j];
    }
  }, "vcat");
}

Tensor slice(const Tensor& v, int offset, int len) {
  if (v.rank() != 1) throw ShapeError("slice: rank 1 required");
  if (offset < 0 || len <= 0 || offset + len > v.extent(0)) {
    throw IndexError("slice [" + std::to_string(offset) + "," + std::to_string(offset + len) +
                     ") of length-" + std::to_string(v.extent(0)) + " tensor");
  }
  std::vector<double> out(v.value().begin() + offset, v.value().begin() + offset + len);
  return make_op({len}, std::move(out), {v}, [offset, len](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int i = 0; i < len; ++i) p.grad[static_cast<size_t>(offset + i)] += self.grad[i];
  }, "slice");
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ContractError("stack_rows of zero tensors");
  const int n = rows[0].extent(0);
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.extent(0) != n) throw ShapeError("stack_rows: rows must be [n]");
  }
  const int T = static_cast<int>(rows.size());
  std::vector<double> out;
  out.reserve(static_cast<size_t>(T) * n);
  for (const auto& r : rows) out.insert(out.end(), r.value().begin(), r.value().end());
  return make_op({T, n}, std::move(out), rows, [n](detail::TensorNode& self) {
    for (size_t t = 0; t < self.parents.size(); ++t) {
      auto& p = *self.parents[t];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      const size_t off = t * static_cast<size_t>(n);
      for (int j = 0; j < n; ++j) p.grad[j] += self.grad[off + j];
    }
  }, "stack_rows");
}

Tensor row(const Tensor& m, int i) {
  if (m.rank() != 2) throw ShapeError("row: rank 2 required");
  const int R = m.extent(0), C = m.extent(1);
  if (i < 0 || i >= R) throw IndexError("row " + std::to_string(i) + " of " + shape_str(m.shape()));
  std::vector<double> out(m.value().begin() + static_cast<size_t>(i) * C,
                          m.value().begin() + static_cast<size_t>(i + 1) * C);
  return make_op({C}, std::move(out), {m}, [i, C](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    const size_t off = static_cast<size_t>(i) * C;
    for (int j = 0; j < C; ++j) p.grad[off + j] += self.grad[j];
  }, "row");
}

Tensor lookup(const Tensor& table, const std::vector<int>& ids, int zero_id) {
  if (table.rank() != 2) throw ShapeError("lookup: table must be [V x d]");
  if (ids.empty()) throw ContractError("lookup with empty id sequence");
  const int V = table.extent(0), d = table.extent(1);
  std::vector<double> out(ids.size() * static_cast<size_t>(d), 0.0);
  const auto& tv = table.value();
  for (size_t t = 0; t < ids.size(); ++t) {
    const int id = ids[t];
    if (id < 0 || id >= V) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(V));
    }
    if (id == zero_id) continue;  // frozen zero row
    std::copy(tv.begin() + static_cast<size_t>(id) * d, tv.begin() + static_cast<size_t>(id + 1) * d,
              out.begin() + t * static_cast<size_t>(d));
  }
  const int L = static_cast<int>(ids.size());
  return make_op({L, d}, std::move(out), {table}, [ids, d, zero_id](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (size_t t = 0; t < ids.size(); ++t) {
      if (ids[t] == zero_id) continue;
      const size_t poff = static_cast<size_t>(ids[t]) * d;
      const size_t goff = t * static_cast<size_t>(d);
      for (int c = 0; c < d; ++c) p.grad[poff + c] += self.grad[goff + c];
    }
  }, "lookup");
}

Tensor pad_rows(const Tensor& m, int before, int after) {
  if (m.rank() != 2) throw ShapeError("pad_rows: rank 2 required");
  if (before < 0 || after < 0) throw ContractError("pad_rows: negative padding");
  if (before == 0 && after == 0) return m;
  const int R = m.extent(0), C = m.extent(1);
  std::vector<double> out(static_cast<size_t>(R + before + after) * C, 0.0);
  std::copy(m.value().begin(), m.value().end(), out.begin() + static_cast<size_t>(before) * C);
  return make_op({R + before + after, C}, std::move(out), {m},
                 [before, R, C](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    const size_t off = static_cast<size_t>(before) * C;
    for (size_t i = 0; i < p.value.size(); ++i) p.grad[i] += self.grad[off + i];
  }, "pad_rows");
}

Tensor flatten(const Tensor& x) {
  if (x.rank() == 1) return x;
  std::vector<double> out(x.value());
  return make_op({x.size()}, std::move(out), {x}, [](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  }, "flatten");
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.value()) acc += v;
  return make_op({1}, {acc}, {x}, [](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    const double g = self.grad[0];
    for (auto& gv : p.grad) gv += g;
  }, "sum");
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / x.size()); }

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1) throw ShapeError("dot: rank 1 required");
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  const auto& av = a.value();
  const auto& bv = b.value();
  for (size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  return make_op({1}, {acc}, {a, b}, [](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const double g = self.grad[0];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < pa.value.size(); ++i) pa.grad[i] += g * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < pb.value.size(); ++i) pb.grad[i] += g * pa.value[i];
    }
  }, "dot");
}

// ---------------------------------------------------------------------------
// Reverse sweep
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  auto* root = &loss.node();
  if (!root->requires_grad) {
    // Constant graph: nothing reachable wants a gradient.
    root->ensure_grad();
    root->grad[0] += 1.0;
    return;
  }
  // Post-order over the requires_grad subgraph.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> visited;
  std::vector<std::pair<detail::TensorNode*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::TensorNode* par = node->parents[next].get();
      ++next;
      if (par->requires_grad && !visited.count(par)) {
        visited.insert(par);
        stack.emplace_back(par, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Interior gradients are scratch: reset them so repeated sweeps only
  // accumulate into leaves.
  for (auto* n : order) {
    if (!n->parents.empty()) n->grad.assign(n->value.size(), 0.0);
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backfn) (*it)->backfn(**it);
  }
}

}  // namespace ctxseq
