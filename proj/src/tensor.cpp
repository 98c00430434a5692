#include "deeplgr/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace deeplgr {

namespace {
thread_local GradientTape* g_active_tape = nullptr;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) : s_(std::make_shared<TensorStorage>()) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
  }
  s_->data.assign(shape_numel(shape), fill);
  s_->shape = std::move(shape);
  s_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : s_(std::make_shared<TensorStorage>()) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
  }
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  s_->shape = std::move(shape);
  s_->data.assign(data.begin(), data.end());
  s_->requires_grad = requires_grad;
}

std::span<double> Tensor::mutable_data() {
  if (s_->pin_count > 0) throw TapeError("tensor is referenced by a live gradient tape");
  return s_->data;
}

std::span<const double> Tensor::grad() const {
  if (s_->grad.empty()) s_->grad.assign(s_->data.size(), 0.0);
  return s_->grad;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return s_->data[0];
}

Tensor Tensor::clone() const {
  Tensor t(s_->shape, std::vector<double>(s_->data.begin(), s_->data.end()), s_->requires_grad);
  return t;
}

std::span<double> grad_buffer(const std::shared_ptr<TensorStorage>& t) {
  if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
  return t->grad;
}

GradientTape::~GradientTape() {
  for (auto& s : pinned_) {
    --s->pin_count;
    if (s->tape_node >= 0) s->tape_node = -1;
  }
}

void GradientTape::pin(const std::shared_ptr<TensorStorage>& s) {
  ++s->pin_count;
  pinned_.push_back(s);
}

void GradientTape::record(const Tensor& output, const std::vector<Tensor>& inputs, BackwardFn fn) {
  if (finalized_) throw TapeError("cannot record on a finalized tape");
  for (const auto& in : inputs) pin(in.storage());
  pin(output.storage());
  output.storage()->tape_node = static_cast<std::int64_t>(nodes_.size());
  output.storage()->requires_grad = true;
  nodes_.push_back(Node{output.storage(), std::move(fn)});
}

void GradientTape::backward(const Tensor& loss) {
  if (finalized_) throw TapeError("backward called twice on the same tape");
  if (loss.numel() != 1) throw ShapeError("backward expects a scalar loss, got " + shape_str(loss.shape()));
  const auto& ls = loss.storage();
  if (ls->tape_node < 0 || static_cast<std::size_t>(ls->tape_node) >= nodes_.size() ||
      nodes_[static_cast<std::size_t>(ls->tape_node)].output != ls) {
    throw TapeError("loss was not produced under this tape");
  }
  finalized_ = true;
  grad_buffer(ls)[0] += 1.0;
  for (std::size_t i = static_cast<std::size_t>(ls->tape_node) + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.output->grad.empty()) continue;
    node.backward(node.output->grad);
  }
}

TapeScope::TapeScope(GradientTape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

GradientTape* active_tape() { return g_active_tape; }

}  // namespace deeplgr
