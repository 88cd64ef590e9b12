#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double tensors. A Tensor is a shared handle to a graph node; operators
// return new nodes that keep their parents alive until the result is
// dropped. Only the operators the extraction network needs are provided.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace usev::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass reaches the node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  const char* op = "leaf";

  /// Zero-initialized grad buffer of the node's size.
  std::vector<double>& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  std::size_t dim(std::size_t i) const { return n_->shape.at(i); }
  std::size_t rank() const { return n_->shape.size(); }
  std::size_t numel() const { return n_->value.size(); }
  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool r) { n_->requires_grad = r; }

  std::span<const double> data() const { return n_->value; }
  std::span<double> data() { return n_->value; }
  double item() const;
  /// Empty span when no gradient has been accumulated.
  std::span<const double> grad() const { return n_->grad; }
  void zero_grad();

  Node* node() const { return n_.get(); }
  const std::shared_ptr<Node>& ptr() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

/// Creates an operator node. `backward` must accumulate into the grads of
/// parents that require them, reading `self.grad`. Exposed so callers can
/// register custom operators (and tests can inject faulty ones).
Tensor make_op(const char* op, Shape shape, std::vector<double> value,
               std::vector<Tensor> parents, BackwardFn backward);

/// While alive, operators on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

struct BackwardStats {
  std::size_t nodes = 0;       // nodes reached that require grad
  std::size_t max_visits = 0;  // largest number of backward calls on one node
};

/// Reverse-mode accumulation from a scalar. Leaf grads accumulate across
/// calls; interior grads are reset for each pass.
BackwardStats backward(const Tensor& loss);

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor log10(const Tensor& a);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
/// Single learned slope shared across all elements.
Tensor prelu(const Tensor& x, const Tensor& slope);

// Reductions.
Tensor sum(const Tensor& x);
Tensor sum_squares(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);

// Layout.
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // rank 2
/// out.shape[i] = x.shape[perm[i]] for rank-3 x.
Tensor permute3(const Tensor& x, std::array<std::size_t, 3> perm);
Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);
/// Rows along axis 0 selected by index (indices may repeat).
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
/// Rank-1 truncate / zero-pad to n.
Tensor fit_length(const Tensor& x, std::size_t n);

// Layers.
/// x[..., In] * w[Out, In]^T + b[Out]. `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
/// Cross-correlation: x[Cin, T], w[Cout, Cin/groups, k], b[Cout] (may be
/// undefined). T' = floor((T + 2*padding - k) / stride) + 1.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::size_t stride = 1, std::size_t groups = 1,
              std::size_t padding = 0);

inline constexpr double kNormEps = 1e-8;
/// Normalizes over the last axis at every leading position, then applies
/// gain/bias of size last-dim. A constant vector maps to zero.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
/// Normalizes over all elements; gain/bias are per last-dim channel.
Tensor global_layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

/// Gate order i, f, g, o; w_ih [4H, In], w_hh [4H, H], b [4H].
struct LstmWeights {
  Tensor w_ih, w_hh, b;
  std::size_t hidden() const { return w_hh.dim(1); }
};

/// Bidirectional LSTM over x[S, T, In] (S independent sequences), zero
/// initial states. Output [S, T, 2H]: forward state then backward state.
Tensor bilstm(const Tensor& x, const LstmWeights& fwd, const LstmWeights& bwd);

/// Chunking for dual-path processing. x[C, T] is zero-padded so that the
/// padded length is a multiple of hop = K/2, plus one hop at each end.
struct ChunkLayout {
  std::size_t length = 0;     // original T
  std::size_t chunk = 0;      // K
  std::size_t hop = 0;        // K/2
  std::size_t fitted = 0;     // T rounded up to a multiple of hop
  std::size_t pad_front = 0;  // zeros before x in the padded signal
  std::size_t num_chunks = 0; // P = 2*fitted/K + 1
  std::size_t padded_length() const { return fitted + chunk; }
};
ChunkLayout chunk_layout(std::size_t length, std::size_t chunk);
/// x[C, T] -> [C, K, P].
Tensor segment_chunks(const Tensor& x, std::size_t chunk);
/// y[C, K, P] -> [C, T]: overlap-add over chunk hops divided by the number
/// of chunks covering each position, then padding removed.
Tensor aggregate_chunks(const Tensor& y, std::size_t length);

/// frames[T, L] -> [(T-1)*hop + L].
Tensor overlap_add(const Tensor& frames, std::size_t hop);

// Optimizer.
struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamOptions opt = {});
  /// One bias-corrected update using the params' current grads; params
  /// without a grad are skipped.
  void step(double lr);
  void zero_grad();
  std::uint64_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamOptions opt_;
  std::uint64_t t_ = 0;
};

}  // namespace usev::ad
