#include "gtf/tensor.hpp"

#include <atomic>
#include <sstream>
#include <unordered_set>

namespace gtf {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

namespace {
std::atomic<std::uint64_t> next_tensor_id{1};
thread_local Tape* active_tape = nullptr;
}  // namespace

Tensor Tensor::make(Shape shape, Vec values, bool requires_grad) {
  auto node = std::make_shared<detail::TensorNode>();
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  node->id = next_tensor_id.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return make(shape, Vec::Zero(shape_numel(shape)), requires_grad);
}

Tensor Tensor::constant(Shape shape, Scalar value, bool requires_grad) {
  return make(shape, Vec::Constant(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) {
  return constant({1}, value, requires_grad);
}

Tensor Tensor::from_flat(Vec flat, Shape shape, bool requires_grad) {
  return make(std::move(shape), std::move(flat), requires_grad);
}

Tensor Tensor::vector(std::initializer_list<Scalar> v, bool requires_grad) {
  Vec data(static_cast<Index>(v.size()));
  Index i = 0;
  for (Scalar x : v) data[i++] = x;
  return make({static_cast<Index>(v.size())}, std::move(data), requires_grad);
}

Tensor Tensor::matrix(Index rows, Index cols, std::initializer_list<Scalar> row_major,
                      bool requires_grad) {
  Vec data(static_cast<Index>(row_major.size()));
  Index i = 0;
  for (Scalar x : row_major) data[i++] = x;
  return make({rows, cols}, std::move(data), requires_grad);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, Scalar stddev, bool requires_grad) {
  std::normal_distribution<Scalar> dist(0.0, stddev);
  Vec data(shape_numel(shape));
  for (Index i = 0; i < data.size(); ++i) data[i] = dist(rng);
  return make(std::move(shape), std::move(data), requires_grad);
}

Index Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows(): rank-2 tensor required, shape " + shape_str(shape()));
  return node_->shape[0];
}

Index Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols(): rank-2 tensor required, shape " + shape_str(shape()));
  return node_->shape[1];
}

const Vec& Tensor::grad() const {
  if (!node_->grad) throw NumericalError("grad(): gradient buffer not populated");
  return *node_->grad;
}

Vec& Tensor::grad_mut() {
  if (!node_->grad) node_->grad = std::make_unique<Vec>(Vec::Zero(numel()));
  return *node_->grad;
}

void Tensor::zero_grad() {
  if (node_->grad) node_->grad->setZero();
}

ConstMatMap Tensor::mat() const {
  if (rank() != 2) throw ShapeError("mat(): rank-2 tensor required, shape " + shape_str(shape()));
  return ConstMatMap(node_->values.data(), node_->shape[0], node_->shape[1]);
}

Tape* Tape::active() { return active_tape; }

void Tape::backward(const Tensor& root, const Tensor& seed) {
  if (entries_.empty()) throw NumericalError("backward: no forward ops recorded");
  if (seed.shape() != root.shape()) {
    throw ShapeError("backward: seed shape " + shape_str(seed.shape()) +
                     " does not match output shape " + shape_str(root.shape()));
  }
  Tensor(root).grad_mut() += seed.values();
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // branch never contributed
    it->pull();
  }
  // Leaves that no path reached still get an (all-zero) buffer.
  std::unordered_set<std::uint64_t> produced;
  produced.reserve(entries_.size());
  for (const auto& e : entries_) produced.insert(e.output.id());
  for (auto& e : entries_) {
    for (auto& in : e.inputs) {
      if (in.requires_grad() && !produced.count(in.id()) && !in.has_grad()) {
        Tensor(in).grad_mut();
      }
    }
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(active_tape) { active_tape = &tape; }

TapeScope::~TapeScope() { active_tape = previous_; }

}  // namespace gtf
