#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pv {

using Shape = std::vector<std::size_t>;

/// Cache-line aligned allocation. Vectorized reductions peel to an aligned
/// boundary, so buffers at varying alignments would sum in varying orders.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class NoGradGuard;

/// Raised when operand shapes are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct TensorStorage {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;  // empty until first accumulation
  bool requires_grad = false;

  /// Zero-filled gradient buffer, allocated on first use.
  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor handle. Copies share storage; use clone() for a
/// deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);
  Tensor(Shape shape, Buffer<T> values);
  Tensor(Shape shape, std::initializer_list<T> values) : Tensor(std::move(shape), Buffer<T>(values)) {}

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->value.size(); }

  std::span<const T> data() const { return impl_->value; }
  /// Write access; intended for parameters, optimizers, and data loaders.
  std::span<T> mutable_data() { return impl_->value; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad();
  /// Gradient as a tensor of the same shape (zeros when never populated).
  Tensor grad_tensor() const;

  Tensor detach() const;
  Tensor clone() const { return detach(); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(impl_->value[i]);
    return Tensor<U>(shape(), std::move(out));
  }

  const std::shared_ptr<TensorStorage<T>>& storage() const { return impl_; }

 private:
  std::shared_ptr<TensorStorage<T>> impl_;
};

/// Append-only record of differentiable operations for reverse-mode AD.
///
/// Constructing a tape makes it the active tape for its scalar type on the
/// current thread; operations on tensors that require gradients append a node
/// while a tape is active. Destruction restores the previously active tape.
template <typename T>
class GradTape {
 public:
  struct Node {
    std::string_view op;
    std::vector<std::shared_ptr<TensorStorage<T>>> inputs;
    std::shared_ptr<TensorStorage<T>> output;
    std::function<void()> backward;
  };

  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active() noexcept { return active_; }

  void record(Node node);
  /// Seeds d(loss)/d(loss) = 1 and replays the nodes in reverse order.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  std::vector<Node> nodes_;
  GradTape* previous_ = nullptr;
  bool replayed_ = false;
  static thread_local GradTape* active_;

  friend class NoGradGuard<T>;
};

/// Runs backward on the active tape of the loss' scalar type.
template <typename T>
void backward(const Tensor<T>& loss);

/// Suspends recording for the current thread while alive.
template <typename T>
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  GradTape<T>* saved_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class GradTape<float>;
extern template class GradTape<double>;
extern template class NoGradGuard<float>;
extern template class NoGradGuard<double>;

}  // namespace pv
