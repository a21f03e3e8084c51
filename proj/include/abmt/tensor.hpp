#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "abmt/common.hpp"

namespace abmt {

// Dense double-precision tensor. Shallow handle over shared storage: copies
// alias the same buffer, clone() makes a deep copy. The grad buffer is absent
// (empty) until backward touches the tensor.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  int ndim() const;
  int dim(int i) const;
  std::size_t numel() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  std::span<const double> data() const;
  std::span<double> data_mut();

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void ensure_grad();
  void clear_grad();
  void accumulate_grad(std::span<const double> g);

  double value() const;  // numel()==1 only
  double at(std::size_t i) const { return data()[i]; }

  Tensor clone() const;  // deep copy of data; grad not copied

  const void* id() const { return impl_.get(); }

 private:
  struct Impl {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty means absent
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Tape of executed operations. Built per forward pass, consumed by one
// backward() call, then discarded. Confine a graph and its intermediate
// tensors to a single thread.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // True when gradients must flow through t: t is a trainable leaf or the
  // output of an earlier op on this graph.
  bool tracks(const Tensor& t) const {
    return t.defined() && (t.requires_grad() || produced_.count(t.id()) > 0);
  }
  void track(const Tensor& out) { produced_.insert(out.id()); }
  void record(const char* op, std::function<void()> backward_fn) {
    nodes_.push_back(Node{op, std::move(backward_fn)});
  }

  // Fills grad slots of every tracked tensor reachable from loss. Gradients
  // accumulate; a second call on the same graph is a state error.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
  std::unordered_set<const void*> produced_;
  bool ran_backward_ = false;
};

// Throws NumericError if any stored value is NaN or infinite.
void check_finite(std::span<const double> values, const char* op);
inline void check_finite(const Tensor& t, const char* op) { check_finite(t.data(), op); }

enum class PoolMode { mean, max };

// Differentiable ops. Pass g=nullptr for inference (no tape recording).
// x may have any leading shape; the last axis is the feature axis.
Tensor linear(Graph* g, const Tensor& x, const Tensor& w, const Tensor& b = Tensor());
Tensor relu(Graph* g, const Tensor& x);
Tensor log_softmax(Graph* g, const Tensor& x);                    // x: N x C
Tensor pool(Graph* g, const Tensor& x, PoolMode mode);            // x: N x P x D -> N x D
Tensor concat(Graph* g, const Tensor& a, const Tensor& b);        // rows of a ++ rows of b
Tensor l2_normalize(Graph* g, const Tensor& x, double eps_norm);  // x: N x D, per row
Tensor add(Graph* g, const Tensor& a, const Tensor& b);           // same shape
Tensor mul(Graph* g, const Tensor& a, const Tensor& b);           // elementwise
Tensor scale(Graph* g, const Tensor& x, double c);
Tensor sum(Graph* g, const Tensor& x);  // -> scalar
Tensor mean_all(Graph* g, const Tensor& x);

// Adam with bias correction. Weight decay is coupled L2: added to the raw
// gradient before the moment updates.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long t = 0;
  double lr = 3.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

AdamState make_adam_state(const Tensor& param, double lr, double weight_decay = 0.0);
// One update per (param, state) pair; grads are consumed and cleared.
void adam_step(std::span<Tensor> params, std::span<AdamState> states);

// Diagnostics recorded by relu/pool during forward when installed: distance
// of inputs to the nearest non-differentiable point. Gradient-check harnesses
// use this to reject inputs too close to a kink for central differences.
struct SmoothnessProbe {
  double min_relu_margin = 1e300;  // min |x| over all relu inputs
  double min_pool_gap = 1e300;     // min (max - second max) over pooled slices
};
SmoothnessProbe* set_smoothness_probe(SmoothnessProbe* probe);  // returns previous

// Compares the analytic gradient of f against central differences
// (f(p+h)-f(p-h))/2h, coordinate by coordinate, over all given params.
// Returns the max relative error with denominator max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const std::function<Tensor(Graph&)>& f, std::span<Tensor> params, double h);

}  // namespace abmt
