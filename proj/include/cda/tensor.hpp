#pragma once

// Dense 64-bit tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same buffer, clone() makes a
// deep copy. Operations never modify their inputs. When a GraphScope is open
// on the current thread, every operation with at least one differentiable
// input appends a node to that scope's graph; backward() then walks the nodes
// in reverse creation order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cda {

class Graph;
class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  const Graph* graph = nullptr;
  std::size_t node = 0;  // meaningful only when graph != nullptr
};

class Tensor {
 public:
  Tensor();  // rank-0 zero
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t rows() const;  // rank-2 only
  std::size_t cols() const;  // rank-2 only

  std::span<const double> data() const { return impl_->data; }
  /// Direct write access; reserved for optimizers and initializers.
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  Tensor grad_tensor() const;  // zeros when no gradient has been accumulated
  void zero_grad() { impl_->grad.clear(); }

  std::optional<std::size_t> node_id() const;

  /// Deep copy of shape and data; the copy is detached from any graph.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor wrap_impl(std::shared_ptr<TensorImpl>);

  std::shared_ptr<TensorImpl> impl_;
};

enum class OpKind : std::uint8_t {
  kMatMul,
  kLinear,
  kAdd,
  kSub,
  kMul,
  kScale,
  kSum,
  kTranspose,
  kSoftmax,
  kLayerNorm,
  kGelu,
  kCrossEntropy,
  kConcatCols,
  kColumn,
  kMaskedFill,
  kGatherRows,
  kDropout,
  kWeightedSqDist,
};

const char* op_name(OpKind kind);

/// Reverse-mode tape. Nodes are appended in creation order, which is a
/// topological order of the recorded DAG.
class Graph {
 public:
  struct Node {
    OpKind kind;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_[i]; }

  /// Populates grad on every differentiable tensor reachable from loss.
  /// Leaf gradients accumulate across calls; intermediate ones are reset.
  void backward(const Tensor& loss);

  std::size_t append(Node node);

  /// Graph currently recording on this thread, or nullptr.
  static Graph* active();

 private:
  friend class GraphScope;
  std::vector<Node> nodes_;
  bool recording_ = true;
};

/// Opens a recording graph for the lifetime of the scope.
class GraphScope {
 public:
  GraphScope();
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

  Graph& graph() { return *graph_; }

 private:
  std::unique_ptr<Graph> graph_;
  Graph* previous_;
};

/// Runs backward on the graph that produced loss; loss must be a single element.
void backward(const Tensor& loss);

// Operations. Shapes are stated as rows x cols.

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
/// x [L,in], weight [out,in], optional bias [out] -> [L,out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias = nullptr);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-12);
/// Exact form 0.5 x (1 + erf(x / sqrt 2)).
Tensor gelu(const Tensor& x);
Tensor cross_entropy(const Tensor& logits, std::size_t target);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor column(const Tensor& x, std::size_t col);
/// Keeps x where keep[i] is true, writes fill elsewhere.
Tensor masked_fill(const Tensor& x, const std::vector<bool>& keep, double fill);
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);
/// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng);
/// sum_i fisher_i * (theta_i - anchor_i)^2, differentiable in theta only.
Tensor weighted_sq_dist(const Tensor& theta, const Tensor& anchor, const Tensor& fisher);

std::size_t layer_norm_param_count(std::size_t d);

}  // namespace cda
