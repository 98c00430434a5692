#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "deeplgr/errors.hpp"

namespace deeplgr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// 64-byte aligned so vectorized kernels see the same layout on every run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

struct TensorStorage {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::int64_t tape_node = -1;  // index of the producing node on the active tape
  int pin_count = 0;            // number of live tapes referencing this buffer
};

/// Dense row-major f64 tensor. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t dim(std::size_t axis) const { return s_->shape.at(axis); }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t numel() const { return s_->data.size(); }

  std::span<const double> data() const { return s_->data; }
  /// Writable view. Throws TapeError while a live tape references the buffer.
  std::span<double> mutable_data();

  bool has_grad() const { return !s_->grad.empty(); }
  /// Gradient view; all zeros if nothing was accumulated.
  std::span<const double> grad() const;
  void zero_grad() { s_->grad.clear(); }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool v) { s_->requires_grad = v; }

  double item() const;
  double operator[](std::size_t flat) const { return s_->data[flat]; }

  Tensor clone() const;

  const std::shared_ptr<TensorStorage>& storage() const { return s_; }

 private:
  std::shared_ptr<TensorStorage> s_;
};

/// Ordered record of differentiable operations; one backward pass per tape.
class GradientTape {
 public:
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  GradientTape() = default;
  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;
  ~GradientTape();

  /// Appends a node producing `output` from `inputs`. Called by operators.
  void record(const Tensor& output, const std::vector<Tensor>& inputs, BackwardFn fn);

  /// Seeds d(loss)/d(loss)=1 and runs every node once in reverse order.
  void backward(const Tensor& loss);

  bool finalized() const { return finalized_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::shared_ptr<TensorStorage> output;
    BackwardFn backward;
  };
  void pin(const std::shared_ptr<TensorStorage>& s);

  std::vector<Node> nodes_;
  std::vector<std::shared_ptr<TensorStorage>> pinned_;
  bool finalized_ = false;
};

/// RAII guard that makes `tape` the active tape on this thread.
class TapeScope {
 public:
  explicit TapeScope(GradientTape& tape);
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  ~TapeScope();

 private:
  GradientTape* previous_;
};

GradientTape* active_tape();

/// Returns a zero-initialised gradient buffer for `t`, allocating on first use.
std::span<double> grad_buffer(const std::shared_ptr<TensorStorage>& t);

}  // namespace deeplgr
