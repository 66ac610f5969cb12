#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace pillarnest {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

// One node of the define-by-run tape. Data is immutable once the producing op
// returns; grad is the only mutable buffer. `backward` pulls this node's grad
// and accumulates into the parents' grads; parents/backward are dropped after
// the backward pass so the graph never outlives one step.
struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  int64_t numel() const { return int64_t(data.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
  }
};

}  // namespace detail

// Value-semantics handle to a tape node; copying aliases the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, float value, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<float> data,
                          bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[size_t(i)]; }
  int ndim() const { return int(node_->shape.size()); }
  int64_t numel() const { return node_->numel(); }

  float* data() { return node_->data.data(); }
  const float* data() const { return node_->data.data(); }
  std::vector<float>& vec() { return node_->data; }
  const std::vector<float>& vec() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  // grad access; nullptr until first accumulation (or ensure_grad)
  float* grad() { return node_->grad.empty() ? nullptr : node_->grad.data(); }
  const float* grad() const { return node_->grad.empty() ? nullptr : node_->grad.data(); }
  std::vector<float>& grad_vec() { node_->ensure_grad(); return node_->grad; }
  void zero_grad() { if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f); }

  float item() const;                       // scalar tensors only
  float at(std::initializer_list<int> idx) const;  // slow, for tests

  std::shared_ptr<detail::Node>& node() { return node_; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Reverse-mode accumulation from a scalar loss. Repeated calls accumulate into
// existing grads; the reached subgraph is freed afterwards.
void backward(const Tensor& loss);

// Thread-local gradient mode (define-by-run tape on/off).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Named trainable tensor; the dotted name encodes stage/block/layer position.
struct Parameter {
  std::string name;
  Tensor tensor;
};

}  // namespace pillarnest
