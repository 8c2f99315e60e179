#pragma once

// Dense f64 tensors with a reverse-mode gradient tape.
//
// A Tensor is a shared handle: copies alias the same buffer. Values are
// treated as immutable once an op has consumed them; only leaf parameters are
// mutated in place (optimizer updates, finite-difference probes).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace stretchtime::numcore {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  std::uint64_t id() const;

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Leaf parameters only: optimizer steps and finite-difference probes.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Fresh buffer with the same values and no tape history.
  Tensor detach() const;

 private:
  friend std::span<double> grad_buffer(const Tensor& t);
  friend void clear_grad(const Tensor& t);
  detail::Node& node() const;

  std::shared_ptr<detail::Node> node_;
};

enum class Primitive {
  matmul,
  add,
  sub,
  mul,
  scale,
  concat,
  slice,
  transpose,
  sum,
  mean,
  softmax,
  layer_norm,
  softplus,
  tanh,
  exp,
  sin,
  cos,
  cumsum,
  masked_zero,
  embedding,
  gelu,
  symplectic_flow,
};

std::string_view primitive_name(Primitive kind);

struct TapeEntry {
  Primitive kind;
  std::vector<std::uint64_t> inputs;
  std::uint64_t output;
  std::function<void()> backward;
};

// Ordered record of primitive applications. Entries are appended in
// execution order, so every input id precedes the output that consumes it.
class Tape {
 public:
  void record(Primitive kind, const std::vector<Tensor>& inputs, const Tensor& output,
              std::function<void()> backward);

  const std::vector<TapeEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear();

 private:
  friend void backward(Tape& tape, const Tensor& loss);
  std::vector<TapeEntry> entries_;
  std::vector<Tensor> outputs_;
};

// Makes `tape` the active tape of the calling thread for the scope lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording on the calling thread.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool previous_;
};

Tape* active_tape();

// Reverse sweep from a scalar loss. Gradients of intermediate results are
// reset first; gradients of leaves accumulate across calls.
void backward(Tape& tape, const Tensor& loss);

// Hooks for primitives defined outside this module.
//
// recording_tape returns the tape an op over `inputs` must be recorded on, or
// nullptr when no input requires grad, recording is suspended, or no tape is
// active.
Tape* recording_tape(std::initializer_list<const Tensor*> inputs);
// Grad buffer of `t`, zero-allocated on first use.
std::span<double> grad_buffer(const Tensor& t);
void clear_grad(const Tensor& t);

// Primitives. Elementwise binary ops broadcast the operand with fewer
// elements over the leading dimensions of the other: after dropping leading
// unit dims its shape must be a suffix of the larger shape.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor concat(const std::vector<Tensor>& parts);  // along the last axis
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor transpose(const Tensor& x);  // swaps the last two axes
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x, std::size_t axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor softmax(const Tensor& x);  // over the last axis
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor softplus(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor cumsum(const Tensor& x, std::size_t axis);
// x * mask with a constant mask (dropout with the keep-rescale baked in).
Tensor masked_zero(const Tensor& x, const Tensor& mask);
Tensor embedding(const Tensor& table, const std::vector<std::size_t>& indices);
// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
Tensor gelu(const Tensor& x);

double softplus_value(double x);

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t tensor_index = 0;
  std::size_t coordinate = 0;
  std::size_t coordinates_checked = 0;
};

// Compares tape gradients of the scalar `loss` against central differences
// for every coordinate of every tensor in `params`. The relative error of a
// coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
GradcheckResult gradcheck(const std::function<Tensor()>& loss, std::span<const Tensor> params,
                          double step);

double gradcheck(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point, double step);

}  // namespace stretchtime::numcore
