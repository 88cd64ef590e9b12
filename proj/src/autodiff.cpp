#include "usev/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "usev/error.hpp"

namespace usev::ad {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

CMapR cmat(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return CMapR(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MapR mmat(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return MapR(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
CMapR cmat(const double* p, std::size_t rows, std::size_t cols) {
  return CMapR(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MapR mmat(double* p, std::size_t rows, std::size_t cols) {
  return MapR(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail(ErrorKind::Shape, std::string(op) + ": shapes " + shape_str(a.shape()) +
                               " and " + shape_str(b.shape()) + " differ");
}

// Parent i of `self` with a grad buffer, or nullptr if it needs none.
std::vector<double>* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

template <typename Fwd, typename Dfdx>
Tensor unary(const char* name, const Tensor& x, Fwd f, Dfdx dfdx) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_op(name, x.shape(), std::move(out), {x}, [dfdx](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      (*gx)[i] += self.grad[i] * dfdx(xv[i], self.value[i]);
  });
}

}  // namespace

std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value.assign(ad::numel(shape), 0.0);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != ad::numel(shape))
    fail(ErrorKind::Shape, "tensor data of " + std::to_string(values.size()) +
                               " values does not fit shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

double Tensor::item() const {
  require(numel() == 1, ErrorKind::Shape, "item() on a tensor of shape " + shape_str(shape()));
  return n_->value[0];
}

void Tensor::zero_grad() {
  if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
}

Tensor make_op(const char* op, Shape shape, std::vector<double> value,
               std::vector<Tensor> parents, BackwardFn backward) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_enabled())
    for (auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
  if (n->requires_grad) {
    for (auto& p : parents) n->parents.push_back(p.ptr());
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

BackwardStats backward(const Tensor& loss) {
  require(loss.defined() && loss.numel() == 1, ErrorKind::Usage,
          "backward() needs a scalar loss");
  BackwardStats stats;
  if (!loss.requires_grad()) return stats;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_map<Node*, int> state;  // 1 = on stack, 2 = done
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  state[loss.node()] = 1;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (!p->requires_grad || state.count(p)) continue;
      state[p] = 1;
      stack.emplace_back(p, 0);
    } else {
      state[node] = 2;
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->parents.empty()) {
      n->ensure_grad();  // leaves accumulate
    } else {
      n->grad.assign(n->value.size(), 0.0);
    }
  }
  loss.node()->grad[0] += 1.0;

  std::unordered_map<Node*, std::size_t> visits;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;
    n->backward(*n);
    stats.max_visits = std::max(stats.max_visits, ++visits[n]);
  }
  stats.nodes = order.size();
  return stats;
}

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_op("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (auto* g = parent_grad(self, k))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_op("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_op("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
  return make_op("div", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& bv = self.parents[1]->value;
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] / bv[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i)
        (*g)[i] -= self.grad[i] * self.value[i] / bv[i];
  });
}

Tensor scale(const Tensor& a, double c) {
  return unary("scale", a, [c](double x) { return c * x; },
               [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary("add_scalar", a, [c](double x) { return x + c; },
               [](double, double) { return 1.0; });
}

Tensor log10(const Tensor& a) {
  return unary("log10", a, [](double x) { return std::log10(x); },
               [](double x, double) { return 1.0 / (x * std::numbers::ln10); });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor prelu(const Tensor& x, const Tensor& slope) {
  require(slope.numel() == 1, ErrorKind::Shape, "prelu slope must have one element");
  const double a = slope.data()[0];
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = v > 0.0 ? v : a * v;
  }
  return make_op("prelu", x.shape(), std::move(out), {x, slope}, [](Node& self) {
    const auto& xv = self.parents[0]->value;
    const double a = self.parents[1]->value[0];
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        (*g)[i] += self.grad[i] * (xv[i] > 0.0 ? 1.0 : a);
    if (auto* g = parent_grad(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.size(); ++i)
        if (xv[i] <= 0.0) acc += self.grad[i] * xv[i];
      (*g)[0] += acc;
    }
  });
}

// ----------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_op("sum", {1}, {acc}, {x}, [](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (double& v : *g) v += self.grad[0];
  });
}

Tensor sum_squares(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v * v;
  return make_op("sum_squares", {1}, {acc}, {x}, [](Node& self) {
    const auto& xv = self.parents[0]->value;
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += 2.0 * self.grad[0] * xv[i];
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a.data()[i] * b.data()[i];
  return make_op("dot", {1}, {acc}, {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0] * bv[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0] * av[i];
  });
}

// --------------------------------------------------------------------- layout

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel(shape) == x.numel(), ErrorKind::Shape,
          "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  return make_op("reshape", std::move(shape), std::vector<double>(x.data().begin(), x.data().end()),
                 {x}, [](Node& self) {
                   if (auto* g = parent_grad(self, 0))
                     for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                 });
}

Tensor transpose(const Tensor& x) {
  require(x.rank() == 2, ErrorKind::Shape, "transpose needs a rank-2 tensor");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.data()[i * c + j];
  return make_op("transpose", {c, r}, std::move(out), {x}, [r, c](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += self.grad[j * r + i];
  });
}

Tensor permute3(const Tensor& x, std::array<std::size_t, 3> perm) {
  require(x.rank() == 3, ErrorKind::Shape, "permute3 needs a rank-3 tensor");
  {
    auto sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    require(sorted == std::array<std::size_t, 3>{0, 1, 2}, ErrorKind::Parameter,
            "permute3 needs a permutation of {0,1,2}");
  }
  const Shape& in = x.shape();
  const Shape out_shape{in[perm[0]], in[perm[1]], in[perm[2]]};
  const std::array<std::size_t, 3> in_stride{in[1] * in[2], in[2], 1};
  // Stride in the input for each output axis.
  const std::array<std::size_t, 3> s{in_stride[perm[0]], in_stride[perm[1]], in_stride[perm[2]]};
  std::vector<std::size_t> src(x.numel());
  std::size_t o = 0;
  for (std::size_t a = 0; a < out_shape[0]; ++a)
    for (std::size_t b = 0; b < out_shape[1]; ++b)
      for (std::size_t c = 0; c < out_shape[2]; ++c) src[o++] = a * s[0] + b * s[1] + c * s[2];
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[src[i]];
  return make_op("permute3", out_shape, std::move(out), {x},
                 [src = std::move(src)](Node& self) {
                   if (auto* g = parent_grad(self, 0))
                     for (std::size_t i = 0; i < src.size(); ++i) (*g)[src[i]] += self.grad[i];
                 });
}

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  require(!xs.empty(), ErrorKind::Shape, "concat of nothing");
  const Shape& s0 = xs[0].shape();
  require(axis < s0.size(), ErrorKind::Shape, "concat axis out of range");
  std::size_t outer = 1, inner = 1, total_axis = 0;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::size_t> widths;
  for (const auto& x : xs) {
    require(x.rank() == s0.size(), ErrorKind::Shape, "concat rank mismatch");
    for (std::size_t i = 0; i < s0.size(); ++i)
      if (i != axis && x.dim(i) != s0[i])
        fail(ErrorKind::Shape, "concat: " + shape_str(x.shape()) + " vs " + shape_str(s0));
    widths.push_back(x.dim(axis) * inner);
    total_axis += x.dim(axis);
  }
  const std::size_t row = total_axis * inner;
  std::vector<double> out(outer * row);
  std::size_t off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(xs[k].data().begin() + static_cast<std::ptrdiff_t>(o * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + off));
    off += widths[k];
  }
  Shape shape = s0;
  shape[axis] = total_axis;
  return make_op("concat", std::move(shape), std::move(out), xs,
                 [widths, outer, row](Node& self) {
                   std::size_t off = 0;
                   for (std::size_t k = 0; k < widths.size(); ++k) {
                     if (auto* g = parent_grad(self, k))
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t i = 0; i < widths[k]; ++i)
                           (*g)[o * widths[k] + i] += self.grad[o * row + off + i];
                     off += widths[k];
                   }
                 });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require(x.rank() >= 1, ErrorKind::Shape, "gather_rows on a scalar");
  const std::size_t n_rows = x.dim(0);
  const std::size_t width = x.numel() / std::max<std::size_t>(n_rows, 1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * width);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] < n_rows, ErrorKind::Shape, "gather_rows index out of range");
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  Shape shape = x.shape();
  shape[0] = idx.size();
  return make_op("gather_rows", std::move(shape), std::move(out), {x},
                 [idx = std::move(idx), width](Node& self) {
                   if (auto* g = parent_grad(self, 0))
                     for (std::size_t r = 0; r < idx.size(); ++r)
                       for (std::size_t i = 0; i < width; ++i)
                         (*g)[idx[r] * width + i] += self.grad[r * width + i];
                 });
}

Tensor fit_length(const Tensor& x, std::size_t n) {
  require(x.rank() == 1, ErrorKind::Shape, "fit_length needs a rank-1 tensor");
  const std::size_t keep = std::min(n, x.numel());
  std::vector<double> out(n, 0.0);
  std::copy_n(x.data().begin(), keep, out.begin());
  return make_op("fit_length", {n}, std::move(out), {x}, [keep](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < keep; ++i) (*g)[i] += self.grad[i];
  });
}

// --------------------------------------------------------------------- layers

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(w.rank() == 2, ErrorKind::Shape, "linear weight must be rank 2");
  const std::size_t out_dim = w.dim(0), in_dim = w.dim(1);
  require(x.rank() >= 1 && x.shape().back() == in_dim, ErrorKind::Shape,
          "linear: input " + shape_str(x.shape()) + " does not end in " + std::to_string(in_dim));
  if (b.defined())
    require(b.numel() == out_dim, ErrorKind::Shape, "linear bias size mismatch");
  const std::size_t m = x.numel() / in_dim;
  std::vector<double> out(m * out_dim);
  {
    auto Y = mmat(out, m, out_dim);
    Y.noalias() = cmat(x.node()->value, m, in_dim) * cmat(w.node()->value, out_dim, in_dim).transpose();
    if (b.defined()) Y.rowwise() += CVecMap(b.data().data(), static_cast<Eigen::Index>(out_dim)).transpose();
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  std::vector<Tensor> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make_op("linear", std::move(shape), std::move(out), std::move(parents),
                 [m, in_dim, out_dim](Node& self) {
                   const auto G = cmat(self.grad, m, out_dim);
                   const auto& xv = self.parents[0]->value;
                   const auto& wv = self.parents[1]->value;
                   if (auto* g = parent_grad(self, 0))
                     mmat(*g, m, in_dim).noalias() += G * cmat(wv, out_dim, in_dim);
                   if (auto* g = parent_grad(self, 1))
                     mmat(*g, out_dim, in_dim).noalias() += G.transpose() * cmat(xv, m, in_dim);
                   if (self.parents.size() > 2)
                     if (auto* g = parent_grad(self, 2))
                       VecMap(g->data(), static_cast<Eigen::Index>(out_dim)) += G.colwise().sum().transpose();
                 });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t groups, std::size_t padding) {
  require(x.rank() == 2 && w.rank() == 3, ErrorKind::Shape,
          "conv1d expects x[Cin,T] and w[Cout,Cin/groups,k]");
  require(stride >= 1 && groups >= 1, ErrorKind::Parameter, "conv1d stride/groups must be >= 1");
  const std::size_t cin = x.dim(0), t_in = x.dim(1);
  const std::size_t cout = w.dim(0), cg = w.dim(1), k = w.dim(2);
  require(cin % groups == 0 && cout % groups == 0, ErrorKind::Shape,
          "conv1d channels not divisible by groups");
  require(cg == cin / groups, ErrorKind::Shape, "conv1d weight " + shape_str(w.shape()) +
                                                    " does not match input channels " +
                                                    std::to_string(cin));
  require(t_in + 2 * padding >= k, ErrorKind::Length, "conv1d input shorter than kernel");
  if (b.defined()) require(b.numel() == cout, ErrorKind::Shape, "conv1d bias size mismatch");
  const std::size_t t_out = (t_in + 2 * padding - k) / stride + 1;
  const std::size_t og = cout / groups;
  const std::size_t col_rows = cg * k;

  // im2col per group: col[(c*k + j), t] = x[g*cg + c, t*stride + j - padding]
  auto im2col = [=](const std::vector<double>& xv, std::size_t g, std::vector<double>& col) {
    col.assign(col_rows * t_out, 0.0);
    for (std::size_t c = 0; c < cg; ++c) {
      const double* xr = xv.data() + (g * cg + c) * t_in;
      for (std::size_t j = 0; j < k; ++j) {
        double* dst = col.data() + (c * k + j) * t_out;
        for (std::size_t t = 0; t < t_out; ++t) {
          const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + j) -
                                     static_cast<std::ptrdiff_t>(padding);
          if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(t_in)) dst[t] = xr[pos];
        }
      }
    }
  };

  std::vector<double> out(cout * t_out, 0.0);
  std::vector<double> col;
  for (std::size_t g = 0; g < groups; ++g) {
    im2col(x.node()->value, g, col);
    mmat(out.data() + g * og * t_out, og, t_out).noalias() =
        cmat(w.node()->value.data() + g * og * col_rows, og, col_rows) * cmat(col, col_rows, t_out);
  }
  if (b.defined())
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t t = 0; t < t_out; ++t) out[o * t_out + t] += b.data()[o];

  std::vector<Tensor> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make_op("conv1d", {cout, t_out}, std::move(out), std::move(parents),
                 [=](Node& self) {
                   const auto& xv = self.parents[0]->value;
                   const auto& wv = self.parents[1]->value;
                   auto* gx = parent_grad(self, 0);
                   auto* gw = parent_grad(self, 1);
                   std::vector<double> col, gcol;
                   for (std::size_t g = 0; g < groups; ++g) {
                     const auto G = cmat(self.grad.data() + g * og * t_out, og, t_out);
                     if (gw) {
                       im2col(xv, g, col);
                       mmat(gw->data() + g * og * col_rows, og, col_rows).noalias() +=
                           G * cmat(col, col_rows, t_out).transpose();
                     }
                     if (gx) {
                       gcol.assign(col_rows * t_out, 0.0);
                       mmat(gcol, col_rows, t_out).noalias() =
                           cmat(wv.data() + g * og * col_rows, og, col_rows).transpose() * G;
                       for (std::size_t c = 0; c < cg; ++c) {
                         double* gr = gx->data() + (g * cg + c) * t_in;
                         for (std::size_t j = 0; j < k; ++j) {
                           const double* src = gcol.data() + (c * k + j) * t_out;
                           for (std::size_t t = 0; t < t_out; ++t) {
                             const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + j) -
                                                        static_cast<std::ptrdiff_t>(padding);
                             if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(t_in)) gr[pos] += src[t];
                           }
                         }
                       }
                     }
                   }
                   if (self.parents.size() > 2)
                     if (auto* gb = parent_grad(self, 2))
                       for (std::size_t o = 0; o < cout; ++o)
                         for (std::size_t t = 0; t < t_out; ++t) (*gb)[o] += self.grad[o * t_out + t];
                 });
}

namespace {

// Shared body of the two normalizations: `groups` independent blocks of
// `block` contiguous elements, affine over the last `channels` axis.
Tensor normalize(const char* name, const Tensor& x, const Tensor& gain, const Tensor& bias,
                 std::size_t block) {
  const std::size_t channels = x.shape().back();
  require(gain.numel() == channels && bias.numel() == channels, ErrorKind::Shape,
          std::string(name) + ": gain/bias must match the last axis (" +
              std::to_string(channels) + ")");
  const std::size_t groups = x.numel() / block;
  std::vector<double> xhat(x.numel()), inv_std(groups), out(x.numel());
  const auto xv = x.data();
  for (std::size_t g = 0; g < groups; ++g) {
    const double* p = xv.data() + g * block;
    double mean = 0.0;
    for (std::size_t i = 0; i < block; ++i) mean += p[i];
    mean /= static_cast<double>(block);
    double var = 0.0;
    for (std::size_t i = 0; i < block; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= static_cast<double>(block);
    inv_std[g] = 1.0 / std::sqrt(var + kNormEps);
    for (std::size_t i = 0; i < block; ++i) {
      const std::size_t idx = g * block + i;
      xhat[idx] = (p[i] - mean) * inv_std[g];
      out[idx] = xhat[idx] * gain.data()[idx % channels] + bias.data()[idx % channels];
    }
  }
  return make_op(name, x.shape(), std::move(out), {x, gain, bias},
                 [xhat = std::move(xhat), inv_std = std::move(inv_std), block, channels,
                  groups](Node& self) {
                   const auto& gv = self.parents[1]->value;
                   if (auto* gg = parent_grad(self, 1))
                     for (std::size_t i = 0; i < xhat.size(); ++i)
                       (*gg)[i % channels] += self.grad[i] * xhat[i];
                   if (auto* gb = parent_grad(self, 2))
                     for (std::size_t i = 0; i < xhat.size(); ++i) (*gb)[i % channels] += self.grad[i];
                   auto* gx = parent_grad(self, 0);
                   if (!gx) return;
                   const double n = static_cast<double>(block);
                   for (std::size_t g = 0; g < groups; ++g) {
                     double mean_g = 0.0, mean_gx = 0.0;
                     for (std::size_t i = 0; i < block; ++i) {
                       const std::size_t idx = g * block + i;
                       const double dxh = self.grad[idx] * gv[idx % channels];
                       mean_g += dxh;
                       mean_gx += dxh * xhat[idx];
                     }
                     mean_g /= n;
                     mean_gx /= n;
                     for (std::size_t i = 0; i < block; ++i) {
                       const std::size_t idx = g * block + i;
                       const double dxh = self.grad[idx] * gv[idx % channels];
                       (*gx)[idx] += inv_std[g] * (dxh - mean_g - xhat[idx] * mean_gx);
                     }
                   }
                 });
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require(x.rank() >= 1, ErrorKind::Shape, "layer_norm on a scalar");
  return normalize("layer_norm", x, gain, bias, x.shape().back());
}

Tensor global_layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require(x.rank() >= 1, ErrorKind::Shape, "global_layer_norm on a scalar");
  return normalize("global_layer_norm", x, gain, bias, x.numel());
}

// ----------------------------------------------------------------------- lstm

namespace {

struct LstmTape {
  // All buffers are [T][S][*] in processing-time order t (not step order).
  std::vector<double> gates;  // activated i, f, g, o: [T][S][4H]
  std::vector<double> cell;   // [T][S][H]
  std::vector<double> tanh_c; // [T][S][H]
  std::vector<double> hidden; // [T][S][H]
};

double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// x_tm is time-major [T][S][In]. Runs one direction and returns the tape.
LstmTape lstm_forward(const std::vector<double>& x_tm, std::size_t T, std::size_t S,
                      std::size_t in, const LstmWeights& w, bool reverse) {
  const std::size_t H = w.hidden();
  const std::size_t G4 = 4 * H;
  LstmTape tape;
  tape.gates.resize(T * S * G4);
  tape.cell.resize(T * S * H);
  tape.tanh_c.resize(T * S * H);
  tape.hidden.resize(T * S * H);

  // Input contribution for all steps at once.
  auto pre = mmat(tape.gates, T * S, G4);
  pre.noalias() = cmat(x_tm, T * S, in) * cmat(w.w_ih.node()->value, G4, in).transpose();
  pre.rowwise() += CVecMap(w.b.data().data(), static_cast<Eigen::Index>(G4)).transpose();

  const auto Whh = cmat(w.w_hh.node()->value, G4, H);
  std::vector<double> zeros(S * H, 0.0);
  for (std::size_t step = 0; step < T; ++step) {
    const std::size_t t = reverse ? T - 1 - step : step;
    const double* h_prev = step == 0 ? zeros.data()
                                     : tape.hidden.data() + (reverse ? t + 1 : t - 1) * S * H;
    const double* c_prev = step == 0 ? zeros.data()
                                     : tape.cell.data() + (reverse ? t + 1 : t - 1) * S * H;
    double* gt = tape.gates.data() + t * S * G4;
    auto Gt = mmat(gt, S, G4);
    if (step > 0) Gt.noalias() += cmat(h_prev, S, H) * Whh.transpose();
    for (std::size_t s = 0; s < S; ++s) {
      double* gr = gt + s * G4;
      double* c = tape.cell.data() + (t * S + s) * H;
      double* tc = tape.tanh_c.data() + (t * S + s) * H;
      double* h = tape.hidden.data() + (t * S + s) * H;
      const double* cp = c_prev + s * H;
      for (std::size_t j = 0; j < H; ++j) {
        const double i_g = sigm(gr[j]);
        const double f_g = sigm(gr[H + j]);
        const double g_g = std::tanh(gr[2 * H + j]);
        const double o_g = sigm(gr[3 * H + j]);
        gr[j] = i_g;
        gr[H + j] = f_g;
        gr[2 * H + j] = g_g;
        gr[3 * H + j] = o_g;
        c[j] = f_g * cp[j] + i_g * g_g;
        tc[j] = std::tanh(c[j]);
        h[j] = o_g * tc[j];
      }
    }
  }
  return tape;
}

// dh_out is [T][S][H] (gradient w.r.t. this direction's outputs). Accumulates
// parameter grads and returns d(input) time-major [T][S][In].
std::vector<double> lstm_backward(const LstmTape& tape, const std::vector<double>& x_tm,
                                  const std::vector<double>& dh_out, std::size_t T,
                                  std::size_t S, std::size_t in, Node& w_ih, Node& w_hh,
                                  Node& b, bool reverse, bool need_dx) {
  const std::size_t H = w_hh.shape[1];
  const std::size_t G4 = 4 * H;
  std::vector<double> dgates(T * S * G4, 0.0);
  std::vector<double> dh_next(S * H, 0.0), dc_next(S * H, 0.0);
  std::vector<double> zeros(S * H, 0.0);
  const auto Whh = cmat(w_hh.value, G4, H);
  for (std::size_t step = T; step-- > 0;) {
    const std::size_t t = reverse ? T - 1 - step : step;
    const bool first = step == 0;
    const std::size_t tp = reverse ? t + 1 : t - 1;
    const double* c_prev = first ? zeros.data() : tape.cell.data() + tp * S * H;
    for (std::size_t s = 0; s < S; ++s) {
      const double* gr = tape.gates.data() + (t * S + s) * G4;
      const double* tc = tape.tanh_c.data() + (t * S + s) * H;
      const double* cp = c_prev + s * H;
      double* dg = dgates.data() + (t * S + s) * G4;
      for (std::size_t j = 0; j < H; ++j) {
        const double i_g = gr[j], f_g = gr[H + j], g_g = gr[2 * H + j], o_g = gr[3 * H + j];
        const double dh = dh_out[(t * S + s) * H + j] + dh_next[s * H + j];
        const double dc = dc_next[s * H + j] + dh * o_g * (1.0 - tc[j] * tc[j]);
        dg[j] = dc * g_g * i_g * (1.0 - i_g);
        dg[H + j] = dc * cp[j] * f_g * (1.0 - f_g);
        dg[2 * H + j] = dc * i_g * (1.0 - g_g * g_g);
        dg[3 * H + j] = dh * tc[j] * o_g * (1.0 - o_g);
        dc_next[s * H + j] = dc * f_g;
      }
    }
    const auto dG = cmat(dgates.data() + t * S * G4, S, G4);
    if (!first) {
      const double* h_prev = tape.hidden.data() + tp * S * H;
      if (w_hh.requires_grad)
        mmat(w_hh.ensure_grad(), G4, H).noalias() += dG.transpose() * cmat(h_prev, S, H);
      mmat(dh_next, S, H).noalias() = dG * Whh;
    }
  }
  const auto dG_all = cmat(dgates, T * S, G4);
  if (w_ih.requires_grad)
    mmat(w_ih.ensure_grad(), G4, in).noalias() += dG_all.transpose() * cmat(x_tm, T * S, in);
  if (b.requires_grad)
    VecMap(b.ensure_grad().data(), static_cast<Eigen::Index>(G4)) += dG_all.colwise().sum().transpose();
  std::vector<double> dx;
  if (need_dx) {
    dx.assign(T * S * in, 0.0);
    mmat(dx, T * S, in).noalias() = dG_all * cmat(w_ih.value, G4, in);
  }
  return dx;
}

void check_lstm_weights(const LstmWeights& w, std::size_t in) {
  require(w.w_ih.defined() && w.w_hh.defined() && w.b.defined(), ErrorKind::Shape,
          "bilstm: missing weights");
  require(w.w_hh.rank() == 2 && w.w_ih.rank() == 2, ErrorKind::Shape, "bilstm weights must be rank 2");
  const std::size_t H = w.w_hh.dim(1);
  require(w.w_hh.dim(0) == 4 * H && w.w_ih.dim(0) == 4 * H && w.w_ih.dim(1) == in &&
              w.b.numel() == 4 * H,
          ErrorKind::Shape, "bilstm: inconsistent weight shapes " + shape_str(w.w_ih.shape()) +
                                " " + shape_str(w.w_hh.shape()) + " for input width " +
                                std::to_string(in));
}

}  // namespace

Tensor bilstm(const Tensor& x, const LstmWeights& fwd, const LstmWeights& bwd) {
  require(x.rank() == 3, ErrorKind::Shape, "bilstm expects x[S,T,In], got " + shape_str(x.shape()));
  const std::size_t S = x.dim(0), T = x.dim(1), in = x.dim(2);
  check_lstm_weights(fwd, in);
  check_lstm_weights(bwd, in);
  const std::size_t H = fwd.hidden();
  require(bwd.hidden() == H, ErrorKind::Shape, "bilstm directions differ in hidden size");

  std::vector<double> x_tm(T * S * in);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t t = 0; t < T; ++t)
      std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((s * T + t) * in), in,
                  x_tm.begin() + static_cast<std::ptrdiff_t>((t * S + s) * in));

  auto tf = std::make_shared<LstmTape>(lstm_forward(x_tm, T, S, in, fwd, false));
  auto tb = std::make_shared<LstmTape>(lstm_forward(x_tm, T, S, in, bwd, true));

  std::vector<double> out(S * T * 2 * H);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t t = 0; t < T; ++t) {
      double* o = out.data() + (s * T + t) * 2 * H;
      std::copy_n(tf->hidden.data() + (t * S + s) * H, H, o);
      std::copy_n(tb->hidden.data() + (t * S + s) * H, H, o + H);
    }

  auto xs = std::make_shared<std::vector<double>>(std::move(x_tm));
  return make_op(
      "bilstm", {S, T, 2 * H}, std::move(out),
      {x, fwd.w_ih, fwd.w_hh, fwd.b, bwd.w_ih, bwd.w_hh, bwd.b},
      [tf, tb, xs, S, T, in, H](Node& self) {
        std::vector<double> dh_f(T * S * H), dh_b(T * S * H);
        for (std::size_t s = 0; s < S; ++s)
          for (std::size_t t = 0; t < T; ++t) {
            const double* g = self.grad.data() + (s * T + t) * 2 * H;
            std::copy_n(g, H, dh_f.data() + (t * S + s) * H);
            std::copy_n(g + H, H, dh_b.data() + (t * S + s) * H);
          }
        Node& xn = *self.parents[0];
        const bool need_dx = xn.requires_grad;
        auto dxf = lstm_backward(*tf, *xs, dh_f, T, S, in, *self.parents[1], *self.parents[2],
                                 *self.parents[3], false, need_dx);
        auto dxb = lstm_backward(*tb, *xs, dh_b, T, S, in, *self.parents[4], *self.parents[5],
                                 *self.parents[6], true, need_dx);
        if (!need_dx) return;
        auto& gx = xn.ensure_grad();
        for (std::size_t s = 0; s < S; ++s)
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i < in; ++i) {
              const std::size_t tm = (t * S + s) * in + i;
              gx[(s * T + t) * in + i] += dxf[tm] + dxb[tm];
            }
      });
}

// --------------------------------------------------------------- chunking

ChunkLayout chunk_layout(std::size_t length, std::size_t chunk) {
  require(chunk >= 2 && chunk % 2 == 0, ErrorKind::Parameter,
          "chunk size K must be even and >= 2, got " + std::to_string(chunk));
  require(length >= 1, ErrorKind::Parameter, "cannot chunk an empty sequence");
  ChunkLayout l;
  l.length = length;
  l.chunk = chunk;
  l.hop = chunk / 2;
  l.fitted = (length + l.hop - 1) / l.hop * l.hop;
  const std::size_t gap = l.fitted - length;
  l.pad_front = l.hop + gap / 2;
  l.num_chunks = 2 * l.fitted / chunk + 1;
  require(chunk <= l.padded_length(), ErrorKind::Parameter, "chunk size exceeds padded length");
  return l;
}

Tensor segment_chunks(const Tensor& x, std::size_t chunk) {
  require(x.rank() == 2, ErrorKind::Shape, "segment_chunks expects x[C,T]");
  const std::size_t C = x.dim(0), T = x.dim(1);
  const ChunkLayout l = chunk_layout(T, chunk);
  const std::size_t K = l.chunk, P = l.num_chunks;
  std::vector<double> out(C * K * P, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t p = 0; p < P; ++p) {
        const std::size_t pos = p * l.hop + k;
        if (pos >= l.pad_front && pos < l.pad_front + T)
          out[(c * K + k) * P + p] = x.data()[c * T + pos - l.pad_front];
      }
  return make_op("segment_chunks", {C, K, P}, std::move(out), {x}, [l, C](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    const std::size_t K = l.chunk, P = l.num_chunks, T = l.length;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t p = 0; p < P; ++p) {
          const std::size_t pos = p * l.hop + k;
          if (pos >= l.pad_front && pos < l.pad_front + T)
            (*g)[c * T + pos - l.pad_front] += self.grad[(c * K + k) * P + p];
        }
  });
}

Tensor aggregate_chunks(const Tensor& y, std::size_t length) {
  require(y.rank() == 3, ErrorKind::Shape, "aggregate_chunks expects y[C,K,P]");
  const std::size_t C = y.dim(0), K = y.dim(1), P = y.dim(2);
  const ChunkLayout l = chunk_layout(length, K);
  require(P == l.num_chunks, ErrorKind::Shape,
          "aggregate_chunks: " + std::to_string(P) + " chunks do not match length " +
              std::to_string(length) + " (expected " + std::to_string(l.num_chunks) + ")");
  std::vector<double> count(l.padded_length(), 0.0);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t k = 0; k < K; ++k) count[p * l.hop + k] += 1.0;
  std::vector<double> acc(C * l.padded_length(), 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t p = 0; p < P; ++p)
        acc[c * l.padded_length() + p * l.hop + k] += y.data()[(c * K + k) * P + p];
  std::vector<double> out(C * length);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < length; ++t) {
      const std::size_t pos = t + l.pad_front;
      out[c * length + t] = acc[c * l.padded_length() + pos] / count[pos];
    }
  return make_op("aggregate_chunks", {C, length}, std::move(out), {y},
                 [l, C, count = std::move(count)](Node& self) {
                   auto* g = parent_grad(self, 0);
                   if (!g) return;
                   const std::size_t K = l.chunk, P = l.num_chunks, T = l.length;
                   for (std::size_t c = 0; c < C; ++c)
                     for (std::size_t k = 0; k < K; ++k)
                       for (std::size_t p = 0; p < P; ++p) {
                         const std::size_t pos = p * l.hop + k;
                         if (pos >= l.pad_front && pos < l.pad_front + T)
                           (*g)[(c * K + k) * P + p] +=
                               self.grad[c * T + pos - l.pad_front] / count[pos];
                       }
                 });
}

Tensor overlap_add(const Tensor& frames, std::size_t hop) {
  require(frames.rank() == 2, ErrorKind::Shape, "overlap_add expects frames[T,L]");
  const std::size_t T = frames.dim(0), L = frames.dim(1);
  require(T >= 1 && L >= 1 && hop >= 1, ErrorKind::Shape, "overlap_add needs non-empty frames");
  const std::size_t n = (T - 1) * hop + L;
  std::vector<double> out(n, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t l = 0; l < L; ++l) out[t * hop + l] += frames.data()[t * L + l];
  return make_op("overlap_add", {n}, std::move(out), {frames}, [T, L, hop](Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t l = 0; l < L; ++l) (*g)[t * L + l] += self.grad[t * hop + l];
  });
}

// ------------------------------------------------------------------ optimizer

Adam::Adam(std::vector<Tensor> params, AdamOptions opt)
    : params_(std::move(params)), opt_(opt) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    const auto g = p.grad();
    if (g.empty()) continue;
    auto x = p.data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      x[i] -= lr * mhat / (std::sqrt(vhat) + opt_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace usev::ad
