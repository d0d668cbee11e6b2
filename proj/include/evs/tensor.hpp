#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace evs {

using Shape = std::vector<std::size_t>;

/// Cache-line aligned storage. Vectorised reductions peel up to the first
/// aligned element, so a fixed base alignment keeps results bit-reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when an op receives tensors whose dimensions do not fit together.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward op produces NaN or infinity from finite inputs.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;
};

/// Dense row-major tensor of doubles. Copies share storage; use clone() for
/// an independent buffer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  /// Independent copy of the data that does not participate in autograd.
  Tensor clone() const;
  Tensor detach() const { return clone(); }

  /// Reinterprets the buffer with a new shape of equal element count. The
  /// result is a separate tape node so gradients route back correctly.
  Tensor reshape(const Shape& shape) const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Eager record of executed differentiable ops. One tape per thread; it is
/// consumed and cleared by backward().
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  struct Entry {
    const char* op;
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };

  static Tape& current();

  void record(const char* op, const Tensor& output, BackwardFn fn);
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

  /// Runs every recorded backward function in exact reverse order.
  void run_backward();

 private:
  std::vector<Entry> entries_;
};

bool grad_enabled();

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Seeds d(loss)/d(loss) = 1, replays the tape backwards, then frees it.
void backward(const Tensor& loss);

namespace autograd {

/// True when grad mode is on and any input requires grad.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(const std::vector<Tensor>& inputs);

/// Grad buffer of t, allocated as zeros on first use.
std::span<double> grad_of(const Tensor& t);

/// Throws NumericError naming op if out holds a non-finite value.
void check_finite(const char* op, const Tensor& out);

}  // namespace autograd

}  // namespace evs
