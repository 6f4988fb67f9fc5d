#include "cda/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "cda/error.hpp"
#include "cda/rng.hpp"

namespace cda {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor wrap_impl(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }

Tensor::Tensor() : impl_(std::make_shared<TensorImpl>()) { impl_->data.assign(1, 0.0); }

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  for (std::size_t s : shape) {
    if (s == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_string(shape) + " needs " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data), requires_grad);
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows() needs a matrix, got " + shape_string(shape()));
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("cols() needs a matrix, got " + shape_string(shape()));
  return impl_->shape[1];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }

Tensor Tensor::grad_tensor() const {
  if (impl_->grad.empty()) return zeros(shape());
  return Tensor(shape(), impl_->grad);
}

std::optional<std::size_t> Tensor::node_id() const {
  if (impl_->graph == nullptr) return std::nullopt;
  return impl_->node;
}

Tensor Tensor::clone() const { return Tensor(shape(), impl_->data, impl_->requires_grad); }

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kMatMul: return "matmul";
    case OpKind::kLinear: return "linear";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kSum: return "sum";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kGelu: return "gelu";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kColumn: return "column";
    case OpKind::kMaskedFill: return "masked_fill";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kDropout: return "dropout";
    case OpKind::kWeightedSqDist: return "weighted_sq_dist";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Graph

namespace {
thread_local Graph* g_active = nullptr;
}  // namespace

Graph* Graph::active() { return g_active; }

std::size_t Graph::append(Node node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

void Graph::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  const auto& limpl = *loss.impl();
  if (limpl.graph != this) throw ContractError("loss was not recorded on this graph");
  for (auto& n : nodes_) n.output.impl()->grad.clear();
  loss.impl()->grad.assign(1, 1.0);
  for (std::size_t i = limpl.node + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (n.output.impl()->grad.empty()) continue;
    n.backward();
  }
}

GraphScope::GraphScope() : graph_(std::make_unique<Graph>()), previous_(g_active) { g_active = graph_.get(); }

GraphScope::~GraphScope() { g_active = previous_; }

void backward(const Tensor& loss) {
  const Graph* g = loss.impl()->graph;
  if (g == nullptr) throw ContractError("backward: loss was not produced under a recording graph");
  // The owning graph is only reachable mutably through the active scope chain.
  Graph* active = Graph::active();
  if (active != g) throw ContractError("backward: the graph that produced loss is not the active graph");
  active->backward(loss);
}

// ---------------------------------------------------------------------------
// Recording helpers

namespace {

bool needs_grad(const Tensor& t) { return t.requires_grad(); }

std::vector<double>& grad_buffer(const Tensor& t) {
  auto& g = t.impl()->grad;
  if (g.empty()) g.assign(t.numel(), 0.0);
  return g;
}

/// Appends a node producing out when any input is differentiable and a graph
/// is recording. make_backward receives out and must return the closure.
template <class MakeBackward>
Tensor record(OpKind kind, Tensor out, std::vector<Tensor> inputs, MakeBackward&& make_backward) {
  Graph* g = Graph::active();
  if (g == nullptr || !g->recording()) return out;
  if (std::none_of(inputs.begin(), inputs.end(), needs_grad)) return out;
  out.set_requires_grad(true);
  out.impl()->graph = g;
  std::function<void()> fn = make_backward(out);
  out.impl()->node = g->append(Graph::Node{kind, std::move(inputs), out, std::move(fn)});
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// c[m,n] += a[k,m]^T * b[k,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return record(OpKind::kMatMul, Tensor({m, n}, std::move(out)), {a, b}, [a, b, m, k, n](const Tensor& c) {
    return [a, b, c, m, k, n] {
      const double* dc = c.grad().data();
      if (a.requires_grad()) gemm_nt(dc, b.data().data(), grad_buffer(a).data(), m, n, k);
      if (b.requires_grad()) gemm_tn(a.data().data(), dc, grad_buffer(b).data(), k, m, n);
    };
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  require_matrix(x, "linear");
  require_matrix(weight, "linear");
  if (x.cols() != weight.cols()) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                         shape_string(weight.shape()));
  }
  const std::size_t rows = x.rows(), in = x.cols(), out_dim = weight.rows();
  if (bias != nullptr && (bias->rank() != 1 || bias->numel() != out_dim)) {
    throw DimensionError("linear: bias " + shape_string(bias->shape()) + " does not match weight " +
                         shape_string(weight.shape()));
  }
  std::vector<double> out(rows * out_dim, 0.0);
  if (bias != nullptr) {
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(bias->data().begin(), out_dim, out.begin() + r * out_dim);
  }
  gemm_nt(x.data().data(), weight.data().data(), out.data(), rows, in, out_dim);
  std::vector<Tensor> inputs{x, weight};
  Tensor b = bias != nullptr ? *bias : Tensor();
  if (bias != nullptr) inputs.push_back(b);
  const bool has_bias = bias != nullptr;
  return record(OpKind::kLinear, Tensor({rows, out_dim}, std::move(out)), std::move(inputs),
                [=](const Tensor& y) {
                  return [=] {
                    const double* dy = y.grad().data();
                    if (x.requires_grad()) gemm_nn(dy, weight.data().data(), grad_buffer(x).data(), rows, out_dim, in);
                    if (weight.requires_grad()) gemm_tn(dy, x.data().data(), grad_buffer(weight).data(), out_dim, rows, in);
                    if (has_bias && b.requires_grad()) {
                      auto& db = grad_buffer(b);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < out_dim; ++j) db[j] += dy[r * out_dim + j];
                    }
                  };
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return record(OpKind::kAdd, Tensor(a.shape(), std::move(out)), {a, b}, [a, b](const Tensor& y) {
    return [a, b, y] {
      const auto dy = y.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto& g = grad_buffer(*t);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
      }
    };
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return record(OpKind::kSub, Tensor(a.shape(), std::move(out)), {a, b}, [a, b](const Tensor& y) {
    return [a, b, y] {
      const auto dy = y.grad();
      if (a.requires_grad()) {
        auto& g = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
      }
      if (b.requires_grad()) {
        auto& g = grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= dy[i];
      }
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return record(OpKind::kMul, Tensor(a.shape(), std::move(out)), {a, b}, [a, b](const Tensor& y) {
    return [a, b, y] {
      const auto dy = y.grad();
      if (a.requires_grad()) {
        auto& g = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * b[i];
      }
      if (b.requires_grad()) {
        auto& g = grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * a[i];
      }
    };
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return record(OpKind::kScale, Tensor(x.shape(), std::move(out)), {x}, [x, factor](const Tensor& y) {
    return [x, y, factor] {
      const auto dy = y.grad();
      auto& g = grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * factor;
    };
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return record(OpKind::kSum, Tensor::scalar(s), {x}, [x](const Tensor& y) {
    return [x, y] {
      const double dy = y.grad()[0];
      auto& g = grad_buffer(x);
      for (double& v : g) v += dy;
    };
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

Tensor transpose(const Tensor& x) {
  require_matrix(x, "transpose");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return record(OpKind::kTranspose, Tensor({c, r}, std::move(out)), {x}, [x, r, c](const Tensor& y) {
    return [x, y, r, c] {
      const auto dy = y.grad();
      auto& g = grad_buffer(x);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += dy[j * r + i];
    };
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw IndexError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_string(x.shape()));
  }
  // View x as [outer, n, inner] with the reduced axis in the middle.
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, x[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(x[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
    }
  }
  return record(OpKind::kSoftmax, Tensor(s, std::move(out)), {x}, [=](const Tensor& y) {
    return [=] {
      const auto dy = y.grad();
      const auto p = y.data();
      auto& g = grad_buffer(x);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          double dotp = 0.0;
          for (std::size_t k = 0; k < n; ++k) dotp += dy[base + k * inner] * p[base + k * inner];
          for (std::size_t k = 0; k < n; ++k) {
            const std::size_t idx = base + k * inner;
            g[idx] += p[idx] * (dy[idx] - dotp);
          }
        }
      }
    };
  });
}

std::size_t layer_norm_param_count(std::size_t d) { return 2 * d; }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (d == 0) throw DimensionError("layer_norm: d must be positive");
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain " + shape_string(gain.shape()) + " / bias " +
                         shape_string(bias.shape()) + " do not match width " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gain[j] + bias[j];
    }
  }
  return record(OpKind::kLayerNorm, Tensor(x.shape(), std::move(out)), {x, gain, bias}, [=](const Tensor& y) {
    return [=] {
      const auto dy = y.grad();
      if (gain.requires_grad()) {
        auto& gg = grad_buffer(gain);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gg[j] += dy[r * d + j] * xhat[r * d + j];
      }
      if (bias.requires_grad()) {
        auto& gb = grad_buffer(bias);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[j] += dy[r * d + j];
      }
      if (x.requires_grad()) {
        auto& gx = grad_buffer(x);
        const double dd = static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = dy[r * d + j] * gain[j];
            s1 += dh;
            s2 += dh * xhat[r * d + j];
          }
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = dy[r * d + j] * gain[j];
            gx[r * d + j] += inv_std[r] / dd * (dd * dh - s1 - xhat[r * d + j] * s2);
          }
        }
      }
    };
  });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
  return record(OpKind::kGelu, Tensor(x.shape(), std::move(out)), {x}, [x](const Tensor& y) {
    return [x, y] {
      const auto dy = y.grad();
      auto& g = grad_buffer(x);
      const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = x[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        g[i] += dy[i] * (cdf + v * pdf);
      }
    };
  });
}

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  if (logits.rank() != 1) throw DimensionError("cross_entropy: logits must be a vector, got " + shape_string(logits.shape()));
  const std::size_t n = logits.numel();
  if (target >= n) {
    throw IndexError("cross_entropy: target " + std::to_string(target) + " outside [0, " + std::to_string(n) + ")");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits.data()) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits.data()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  const double loss = lse - logits[target];
  return record(OpKind::kCrossEntropy, Tensor::scalar(loss), {logits}, [=](const Tensor& y) {
    return [=] {
      const double dy = y.grad()[0];
      auto& g = grad_buffer(logits);
      for (std::size_t i = 0; i < n; ++i) {
        const double p = std::exp(logits[i] - lse);
        g[i] += dy * (p - (i == target ? 1.0 : 0.0));
      }
    };
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ (" + shape_string(p.shape()) + ")");
    offsets.push_back(total);
    total += p.cols();
  }
  std::vector<double> out(rows * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t c = parts[k].cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(parts[k].data().begin() + r * c, c, out.begin() + r * total + offsets[k]);
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return record(OpKind::kConcatCols, Tensor({rows, total}, std::move(out)), inputs, [=](const Tensor& y) {
    return [=] {
      const auto dy = y.grad();
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!inputs[k].requires_grad()) continue;
        const std::size_t c = inputs[k].cols();
        auto& g = grad_buffer(inputs[k]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) g[r * c + j] += dy[r * total + offsets[k] + j];
      }
    };
  });
}

Tensor column(const Tensor& x, std::size_t col) {
  require_matrix(x, "column");
  const std::size_t r = x.rows(), c = x.cols();
  if (col >= c) throw IndexError("column: index " + std::to_string(col) + " out of range for " + shape_string(x.shape()));
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = x[i * c + col];
  return record(OpKind::kColumn, Tensor({r}, std::move(out)), {x}, [=](const Tensor& y) {
    return [=] {
      const auto dy = y.grad();
      auto& g = grad_buffer(x);
      for (std::size_t i = 0; i < r; ++i) g[i * c + col] += dy[i];
    };
  });
}

Tensor masked_fill(const Tensor& x, const std::vector<bool>& keep, double fill) {
  if (keep.size() != x.numel()) {
    throw DimensionError("masked_fill: mask of length " + std::to_string(keep.size()) + " for " + shape_string(x.shape()));
  }
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep[i] ? x[i] : fill;
  return record(OpKind::kMaskedFill, Tensor(x.shape(), std::move(out)), {x}, [=](const Tensor& y) {
    return [=] {
      const auto dy = y.grad();
      auto& g = grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (keep[i]) g[i] += dy[i];
    };
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  require_matrix(table, "gather_rows");
  const std::size_t v = table.rows(), d = table.cols();
  if (ids.empty()) throw DimensionError("gather_rows: empty id list");
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) throw IndexError("gather_rows: id " + std::to_string(ids[i]) + " >= table size " + std::to_string(v));
    std::copy_n(table.data().begin() + ids[i] * d, d, out.begin() + i * d);
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return record(OpKind::kGatherRows, Tensor({ids.size(), d}, std::move(out)), {table}, [=](const Tensor& y) {
    return [=] {
      const auto dy = y.grad();
      auto& g = grad_buffer(table);
      for (std::size_t i = 0; i < idv.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) g[idv[i] * d + j] += dy[i * d + j];
    };
  });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] = x[i] * mask[i];
  }
  return record(OpKind::kDropout, Tensor(x.shape(), std::move(out)), {x}, [=](const Tensor& y) {
    return [=] {
      const auto dy = y.grad();
      auto& g = grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * mask[i];
    };
  });
}

Tensor weighted_sq_dist(const Tensor& theta, const Tensor& anchor, const Tensor& fisher) {
  require_same_shape(theta, anchor, "weighted_sq_dist");
  require_same_shape(theta, fisher, "weighted_sq_dist");
  double s = 0.0;
  for (std::size_t i = 0; i < theta.numel(); ++i) {
    const double diff = theta[i] - anchor[i];
    s += fisher[i] * diff * diff;
  }
  return record(OpKind::kWeightedSqDist, Tensor::scalar(s), {theta}, [=](const Tensor& y) {
    return [=] {
      const double dy = y.grad()[0];
      auto& g = grad_buffer(theta);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy * 2.0 * fisher[i] * (theta[i] - anchor[i]);
    };
  });
}

}  // namespace cda
