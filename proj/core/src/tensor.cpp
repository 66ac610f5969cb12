#include "pillarnest/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "pillarnest/errors.hpp"

namespace pillarnest {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  Tensor t;
  t.node_ = std::make_shared<detail::Node>();
  t.node_->shape = shape;
  t.node_->data.assign(size_t(shape_numel(shape)), 0.0f);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  return t;
}

Tensor Tensor::from_data(const Shape& shape, std::vector<float> data, bool requires_grad) {
  if (int64_t(data.size()) != shape_numel(shape))
    throw ConfigError("tensor data size " + std::to_string(data.size()) +
                      " does not match shape " + shape_str(shape));
  Tensor t;
  t.node_ = std::make_shared<detail::Node>();
  t.node_->shape = shape;
  t.node_->data = std::move(data);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

float Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor with " + std::to_string(numel()) + " elements");
  return node_->data[0];
}

float Tensor::at(std::initializer_list<int> idx) const {
  const Shape& s = node_->shape;
  if (idx.size() != s.size()) throw UsageError("at(): rank mismatch");
  int64_t off = 0;
  size_t i = 0;
  for (int v : idx) {
    off = off * s[i] + v;
    ++i;
  }
  return node_->data[size_t(off)];
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw UsageError("backward() requires a scalar loss tensor");
  if (!std::isfinite(loss.item()))
    throw UsageError("backward() on non-finite loss");

  using detail::Node;
  // iterative post-order topological sort; shared ownership keeps interior
  // nodes alive until the whole pass is done
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<std::shared_ptr<Node>, size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      std::shared_ptr<Node> p = n->parents[i];
      ++i;
      if (visited.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0f;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = it->get();
    // nodes with empty grad received no contribution; skipping them is exact
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // free the graph; leaf grads stay
  for (auto& n : order) {
    n->backward = nullptr;
    n->parents.clear();
  }
}

}  // namespace pillarnest
