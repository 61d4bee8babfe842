#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "gtf/errors.hpp"

namespace gtf {

using Scalar = double;
using Index = Eigen::Index;
using Shape = std::vector<Index>;

using Vec = Eigen::VectorXd;
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::string shape_str(const Shape& s);
Index shape_numel(const Shape& s);

namespace detail {
struct TensorNode {
  Shape shape;
  Vec values;  // row-major flat storage
  bool requires_grad = false;
  std::unique_ptr<Vec> grad;  // lazily allocated, zero-initialized
  std::uint64_t id = 0;
};
}  // namespace detail

/// Dense row-major 64-bit tensor. Copies share the underlying node, so a
/// Tensor behaves like a handle: values are written at construction and by
/// the optimizer between passes; gradient buffers accumulate additively.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);
  static Tensor from_flat(Vec flat, Shape shape, bool requires_grad = false);
  static Tensor vector(std::initializer_list<Scalar> v, bool requires_grad = false);
  static Tensor matrix(Index rows, Index cols, std::initializer_list<Scalar> row_major,
                       bool requires_grad = false);
  /// Gaussian init, mean 0.
  static Tensor randn(Shape shape, std::mt19937_64& rng, Scalar stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Index dim(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
  Index numel() const { return node_->values.size(); }
  Index rows() const;
  Index cols() const;
  bool requires_grad() const { return node_->requires_grad; }

  const Vec& values() const { return node_->values; }
  /// Direct write access; used by initialization, the optimizer step and
  /// finite-difference probes. Mutating values invalidates recorded tapes.
  Vec& values_mut() { return node_->values; }

  bool has_grad() const { return node_->grad != nullptr; }
  const Vec& grad() const;
  Vec& grad_mut();  // allocates zeros on first touch
  void zero_grad();

  Scalar operator()(Index i) const { return node_->values[i]; }
  Scalar operator()(Index i, Index j) const { return node_->values[i * cols() + j]; }

  /// Row-major matrix view of a rank-2 tensor.
  ConstMatMap mat() const;

  std::uint64_t id() const { return node_->id; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  static Tensor make(Shape shape, Vec values, bool requires_grad);

  std::shared_ptr<detail::TensorNode> node_;
};

/// Reverse-mode tape. Ops append entries in forward (topological) order;
/// backward replays them in reverse, accumulating into grad buffers.
/// Rebuilt per forward pass; one tape per thread of execution.
class Tape {
 public:
  struct Entry {
    const char* op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> pull;  // accumulates input grads from output grad
  };

  void record(Entry entry) { entries_.push_back(std::move(entry)); }

  /// Seeds `root`'s gradient with `seed` and propagates backwards through
  /// every recorded op. Every requires_grad leaf ends up with an allocated
  /// (possibly zero) gradient buffer.
  void backward(const Tensor& root, const Tensor& seed);

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

  static Tape* active();

 private:
  friend class TapeScope;
  std::vector<Entry> entries_;
};

/// RAII activation of a tape for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace gtf
