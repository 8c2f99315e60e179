#include "stretchtime/numcore.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

namespace stretchtime::numcore {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t id = 0;
};

namespace {
std::atomic<std::uint64_t> next_id{1};
thread_local Tape* current_tape = nullptr;
thread_local bool grad_suspended = false;
}  // namespace

}  // namespace detail

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (element_count(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
  node_->id = detail::next_id.fetch_add(1, std::memory_order_relaxed);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({}, {value}, requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    if (row.size() != cols) throw ShapeError("tensor: ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(values), requires_grad);
}

detail::Node& Tensor::node() const {
  if (!node_) throw std::logic_error("tensor: use of undefined tensor");
  return *node_;
}

std::uint64_t Tensor::id() const { return node().id; }
const Shape& Tensor::shape() const { return node().shape; }

std::size_t Tensor::size(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return node().values.size(); }
std::span<const double> Tensor::values() const { return node().values; }
std::span<double> Tensor::mutable_values() { return node().values; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_string(shape()));
  return node().values[0];
}

double Tensor::at(std::size_t i) const { return node().values.at(i); }

double Tensor::at(std::size_t row, std::size_t col) const {
  const auto& s = shape();
  if (s.size() != 2) throw ShapeError("at(row, col): tensor of shape " + shape_string(s));
  return node().values.at(row * s[1] + col);
}

bool Tensor::requires_grad() const { return node().requires_grad; }
void Tensor::set_requires_grad(bool flag) { node().requires_grad = flag; }
bool Tensor::has_grad() const { return !node().grad.empty(); }
std::span<const double> Tensor::grad() const { return node().grad; }

void Tensor::zero_grad() {
  auto& n = node();
  if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), node().values, false); }

std::span<double> grad_buffer(const Tensor& t) {
  auto& n = t.node();
  if (n.grad.empty()) n.grad.assign(n.values.size(), 0.0);
  return n.grad;
}

void clear_grad(const Tensor& t) {
  auto& n = t.node();
  n.grad.clear();
  n.grad.shrink_to_fit();
}

std::string_view primitive_name(Primitive kind) {
  switch (kind) {
    case Primitive::matmul: return "matmul";
    case Primitive::add: return "add";
    case Primitive::sub: return "sub";
    case Primitive::mul: return "mul";
    case Primitive::scale: return "scale";
    case Primitive::concat: return "concat";
    case Primitive::slice: return "slice";
    case Primitive::transpose: return "transpose";
    case Primitive::sum: return "sum";
    case Primitive::mean: return "mean";
    case Primitive::softmax: return "softmax";
    case Primitive::layer_norm: return "layer_norm";
    case Primitive::softplus: return "softplus";
    case Primitive::tanh: return "tanh";
    case Primitive::exp: return "exp";
    case Primitive::sin: return "sin";
    case Primitive::cos: return "cos";
    case Primitive::cumsum: return "cumsum";
    case Primitive::masked_zero: return "masked_zero";
    case Primitive::embedding: return "embedding";
    case Primitive::gelu: return "gelu";
    case Primitive::symplectic_flow: return "symplectic_flow";
  }
  return "unknown";
}

void Tape::record(Primitive kind, const std::vector<Tensor>& inputs, const Tensor& output,
                  std::function<void()> backward) {
  TapeEntry entry{kind, {}, output.id(), std::move(backward)};
  entry.inputs.reserve(inputs.size());
  for (const auto& t : inputs) entry.inputs.push_back(t.id());
  entries_.push_back(std::move(entry));
  outputs_.push_back(output);
}

void Tape::clear() {
  entries_.clear();
  outputs_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(detail::current_tape) {
  detail::current_tape = &tape;
}
TapeScope::~TapeScope() { detail::current_tape = previous_; }

NoGradScope::NoGradScope() : previous_(detail::grad_suspended) {
  detail::grad_suspended = true;
}
NoGradScope::~NoGradScope() { detail::grad_suspended = previous_; }

Tape* active_tape() { return detail::current_tape; }

Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  if (detail::grad_suspended || detail::current_tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return detail::current_tape;
  }
  return nullptr;
}

void backward(Tape& tape, const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward: loss does not depend on any tensor requiring grad");
  }
  for (const auto& out : tape.outputs_) clear_grad(out);
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = tape.entries_.size(); i-- > 0;) {
    const Tensor& out = tape.outputs_[i];
    if (!out.has_grad()) continue;
    tape.entries_[i].backward();
  }
}

}  // namespace stretchtime::numcore
