#pragma once

#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "sac/common.hpp"
#include "sac/rng.hpp"

namespace sac {

// Dense row-major float tensor (last dim fastest) with reverse-mode autodiff.
// Values live in a shared buffer so reshapes are views; gradients are
// per-tensor buffers populated by Tape::backward. Tensors are immutable once
// produced by an op; the tape is confined to one logical thread.

struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<float>> values;
  std::vector<float> grad;  // empty until backward populates it
  bool requires_grad = false;
  std::int64_t node = -1;  // producing tape node, -1 for leaves
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value);
  static Tensor randn(Shape shape, Rng& rng, double stdev = 1.0, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  Dim dim(int i) const {
    int n = ndim();
    if (i < 0) i += n;
    return impl_->shape[static_cast<size_t>(i)];
  }
  Dim numel() const { return numel_of(impl_->shape); }

  float* data() { return impl_->values->data(); }
  const float* data() const { return impl_->values->data(); }
  std::span<const float> values() const { return {impl_->values->data(), impl_->values->size()}; }

  bool requires_grad() const { return impl_->requires_grad; }
  // Persistent gradient buffer; empty when backward has not reached this tensor.
  const std::vector<float>& grad() const { return impl_->grad; }
  void zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f); }

  float item() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Per-backward-call gradient store. Closures read the flow of their outputs
// and accumulate into the flow of their inputs; at the end of the walk the
// flows of requires_grad tensors are added into the persistent buffers (so
// repeated backward calls accumulate, per the contract).
class GradFlow {
 public:
  std::span<float> of(const std::shared_ptr<TensorImpl>& t);
  // nullptr when no gradient has flowed to t
  const std::vector<float>* find(const TensorImpl* t) const;

 private:
  friend class Tape;
  struct Entry {
    std::shared_ptr<TensorImpl> impl;
    std::vector<float> g;
  };
  std::unordered_map<const TensorImpl*, size_t> index_;
  std::vector<Entry> entries_;
};

// Ordered node list; append order is topological by construction, backward
// visits nodes in strict reverse order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // RAII activation of a tape on the current thread.
  class Scope {
   public:
    explicit Scope(Tape* tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  void record(const char* op, std::vector<std::shared_ptr<TensorImpl>> outs,
              std::function<void(GradFlow&)> backward);
  void backward(const Tensor& loss);
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    const char* op;
    std::vector<std::shared_ptr<TensorImpl>> outs;
    std::function<void(GradFlow&)> backward;
  };
  std::vector<Node> nodes_;
};

// Shared helper for ops defined outside tensor.cpp (neuron, train): builds the
// output tensor, propagates requires_grad from inputs, and records the node on
// the active tape when gradients are needed.
Tensor make_op_result(const char* op, Shape shape, std::vector<float> values,
                      std::initializer_list<const Tensor*> inputs,
                      const std::function<std::function<void(GradFlow&)>(const Tensor& out)>& make_backward);

// ---- operations ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float c);

// Batched matrix product a[..,m,k] * b[..,k,n] -> [..,m,n]; leading batch
// dims broadcast (right-aligned, size-1 expansion).
Tensor matmul(const Tensor& a, const Tensor& b);

// x[..,d_in] * w[d_out,d_in]^T + b; bias optional (undefined Tensor).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor());

// Cross-correlation, no kernel flip. x[N,C,H,W], w[O,C/groups,kh,kw].
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding, int groups = 1);

// Normalizes over one axis; gain/bias have that axis's length.
Tensor layernorm(const Tensor& x, int axis, const Tensor& gain, const Tensor& bias,
                 float eps = 1e-5f);

Tensor global_avg_pool(const Tensor& x);  // [N,C,H,W] -> [N,C]
Tensor mean_axis(const Tensor& x, int axis);
Tensor sum_all(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& xs, int axis);
std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<Dim>& sizes);

Tensor repeat_axis0(const Tensor& x, Dim t);  // [..] -> [t,..]
Tensor softmax_lastdim(const Tensor& x);
Tensor gelu(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, float c) { return scale(a, c); }
inline Tensor operator*(float c, const Tensor& a) { return scale(a, c); }

}  // namespace sac
