#include "elm/tensor.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace elm {

namespace {
thread_local bool g_grad_enabled = true;
}

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(const std::vector<int>& shape, bool requires_grad) {
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(static_cast<size_t>(shape_numel(shape)), 0.0);
  t.requires_grad = requires_grad;
  // Parameters allocate their grad buffer at birth: every later handle copy
  // shares it, so accumulation is visible through all of them.
  if (requires_grad) t.grad_ptr();
  return t;
}

Tensor Tensor::full(const std::vector<int>& shape, double value) {
  Tensor t = zeros(shape);
  std::fill(t.data->begin(), t.data->end(), value);
  return t;
}

Tensor Tensor::from(const std::vector<int>& shape, std::vector<double> values) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("tensor: value count " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

int64_t Tensor::numel() const { return data ? static_cast<int64_t>(data->size()) : 0; }

double* Tensor::grad_ptr() {
  if (!grad) grad = std::make_shared<std::vector<double>>(data->size(), 0.0);
  return grad->data();
}

void Tensor::zero_grad() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

Tensor Tensor::detach() const {
  Tensor t;
  t.shape = shape;
  t.data = data;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(*data);
  return t;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void attach(Tensor& out, std::initializer_list<std::reference_wrapper<const Tensor>> parents,
            std::function<void(Tensor&)> backward) {
  if (!g_grad_enabled) return;
  bool need = false;
  for (const Tensor& p : parents)
    if (p.requires_grad) { need = true; break; }
  if (!need) return;
  out.requires_grad = true;
  out.node = std::make_shared<Node>();
  out.node->parents.reserve(parents.size());
  for (const std::reference_wrapper<const Tensor>& r : parents) {
    // The buffer must exist before the handle is copied so that every copy,
    // including the caller's, shares it.
    if (r.get().requires_grad) const_cast<Tensor&>(r.get()).grad_ptr();
    out.node->parents.push_back(r.get());
  }
  out.node->backward = std::move(backward);
}

void backward(Tensor& root, const std::vector<double>* seed) {
  if (seed && static_cast<int64_t>(seed->size()) != root.numel())
    throw std::invalid_argument("backward: seed size " + std::to_string(seed->size()) +
                                " does not match root numel " + std::to_string(root.numel()));
  root.grad_ptr();
  if (seed) {
    std::copy(seed->begin(), seed->end(), root.grad->begin());
  } else {
    std::fill(root.grad->begin(), root.grad->end(), 1.0);
  }
  if (!root.node) return;

  // Iterative post-order walk; tensors sharing a Node are one vertex.
  struct Frame {
    Tensor t;
    size_t next = 0;
  };
  std::unordered_set<Node*> visited;
  std::vector<Tensor> order;
  std::vector<Frame> stack;
  visited.insert(root.node.get());
  stack.push_back({root, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (!f.t.node || f.next >= f.t.node->parents.size()) {
      order.push_back(f.t);
      stack.pop_back();
      continue;
    }
    Tensor p = f.t.node->parents[f.next++];
    if (p.node && !visited.count(p.node.get())) {
      visited.insert(p.node.get());
      stack.push_back({std::move(p), 0});
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (it->node && it->node->backward) it->node->backward(*it);
  }
}

}  // namespace elm
