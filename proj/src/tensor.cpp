#include "pv/tensor.hpp"

#include <cmath>
#include <sstream>

namespace pv {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<TensorStorage<T>>()) {
  validate_shape(shape);
  impl_->value.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : Tensor(std::move(shape), Buffer<T>(values.begin(), values.end())) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, Buffer<T> values) : impl_(std::make_shared<TensorStorage<T>>()) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->value = std::move(values);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  }
  return impl_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_str(shape()));
  return impl_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank mismatch for shape " + shape_str(shape()));
  std::size_t offset = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= impl_->shape[axis]) throw ShapeError("index out of range for shape " + shape_str(shape()));
    offset = offset * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->value[offset];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (impl_) impl_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::grad_tensor() const {
  if (!has_grad()) return Tensor(shape());
  return Tensor(shape(), impl_->grad);
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), impl_->value);
}

template <typename T>
thread_local GradTape<T>* GradTape<T>::active_ = nullptr;

template <typename T>
GradTape<T>::GradTape() : previous_(active_) {
  active_ = this;
}

template <typename T>
GradTape<T>::~GradTape() {
  if (active_ == this) active_ = previous_;
}

template <typename T>
void GradTape<T>::record(Node node) {
  nodes_.push_back(std::move(node));
}

template <typename T>
void GradTape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (replayed_) throw std::logic_error("backward already replayed on this tape");
  if (!loss.requires_grad()) throw std::logic_error("loss is not connected to the tape");
  replayed_ = true;
  loss.storage()->grad_buffer()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not on a path to the loss
    it->backward();
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  auto* tape = GradTape<T>::active();
  if (!tape) throw std::logic_error("backward called without an active tape");
  tape->backward(loss);
}

template <typename T>
NoGradGuard<T>::NoGradGuard() : saved_(GradTape<T>::active_) {
  GradTape<T>::active_ = nullptr;
}

template <typename T>
NoGradGuard<T>::~NoGradGuard() {
  GradTape<T>::active_ = saved_;
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;
template class NoGradGuard<float>;
template class NoGradGuard<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace pv
