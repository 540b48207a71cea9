#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace elm {

struct Node;

// Dense row-major tensor of doubles. Copies are handles: they share the
// underlying data and grad buffers, which is how gradients accumulated
// during backward() reach the weight tensors held by the caller.
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;  // allocated on first use
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // producer record, set while grad mode is on

  Tensor() = default;

  static Tensor zeros(const std::vector<int>& shape, bool requires_grad = false);
  static Tensor full(const std::vector<int>& shape, double value);
  static Tensor from(const std::vector<int>& shape, std::vector<double> values);

  int64_t numel() const;
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  double* ptr() { return data->data(); }
  const double* ptr() const { return data->data(); }
  std::vector<double>& vec() { return *data; }
  const std::vector<double>& vec() const { return *data; }

  double* grad_ptr();  // allocates a zeroed buffer on first call
  bool has_grad() const { return grad != nullptr; }
  void zero_grad();

  Tensor detach() const;  // shares data, drops node and grad tracking
  Tensor clone() const;   // deep copy of data, no node
};

// Producer record for reverse mode. backward reads out.grad and accumulates
// into the parents' grad buffers.
struct Node {
  std::vector<Tensor> parents;
  std::function<void(Tensor&)> backward;
};

bool grad_enabled();

// Scoped switch that disables graph construction (inference / oracle reruns).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Attaches a producer node to out when grad mode is on and some parent
// requires grad; otherwise leaves out as a plain tensor. Parents that require
// grad get their grad buffer allocated here, before the handles are copied
// into the node, so accumulation during backward reaches the caller's tensors.
void attach(Tensor& out, std::initializer_list<std::reference_wrapper<const Tensor>> parents,
            std::function<void(Tensor&)> backward);

// Reverse-mode sweep from root in topological order. seed, when given, must
// have root.numel() entries; otherwise the root is seeded with ones.
void backward(Tensor& root, const std::vector<double>* seed = nullptr);

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

}  // namespace elm
