#include "gtf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace gtf {

namespace {

SoftmaxObserver g_softmax_observer;

bool any_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void record(const char* op, std::vector<Tensor> inputs, const Tensor& out,
            std::function<void()> pull) {
  Tape* tape = Tape::active();
  if (tape && out.requires_grad()) {
    tape->record({op, std::move(inputs), out, std::move(pull)});
  }
}

void check_axis(const char* op, const Tensor& a, int axis) {
  if (axis < 0 || axis >= a.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(a.shape()));
  }
}

// Decomposes a shape around `axis` into (outer, n, inner) strides.
struct AxisSplit {
  Index outer = 1;
  Index n = 0;
  Index inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.n = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) {
    s.inner *= shape[i];
  }
  return s;
}

Shape drop_axis(const Shape& shape, int axis) {
  Shape out;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    if (i != axis) out.push_back(shape[static_cast<std::size_t>(i)]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

void set_softmax_observer(SoftmaxObserver obs) { g_softmax_observer = std::move(obs); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const Index n = a.rows(), m = b.cols();
  Vec out(n * m);
  MatMap(out.data(), n, m).noalias() = a.mat() * b.mat();
  Tensor y = Tensor::from_flat(std::move(out), {n, m}, any_grad({&a, &b}));
  record("matmul", {a, b}, y, [a = a, b = b, y]() mutable {
    ConstMatMap g(y.grad().data(), y.rows(), y.cols());
    if (a.requires_grad()) {
      MatMap ga(a.grad_mut().data(), a.rows(), a.cols());
      ga.noalias() += g * b.mat().transpose();
    }
    if (b.requires_grad()) {
      MatMap gb(b.grad_mut().data(), b.rows(), b.cols());
      gb.noalias() += a.mat().transpose() * g;
    }
  });
  return y;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) {
    throw ShapeError("transpose: rank-2 tensor required, shape " + shape_str(a.shape()));
  }
  const Index n = a.rows(), m = a.cols();
  Vec out(n * m);
  MatMap(out.data(), m, n) = a.mat().transpose();
  Tensor y = Tensor::from_flat(std::move(out), {m, n}, a.requires_grad());
  record("transpose", {a}, y, [a = a, y]() mutable {
    ConstMatMap g(y.grad().data(), y.rows(), y.cols());
    MatMap ga(a.grad_mut().data(), a.rows(), a.cols());
    ga += g.transpose();
  });
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  const bool rg = any_grad({&a, &b});
  if (a.shape() == b.shape()) {
    Tensor y = Tensor::from_flat(a.values() + b.values(), a.shape(), rg);
    record("add", {a, b}, y, [a = a, b = b, y]() mutable {
      if (a.requires_grad()) a.grad_mut() += y.grad();
      if (b.requires_grad()) b.grad_mut() += y.grad();
    });
    return y;
  }
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  if (!a_scalar && !b_scalar) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const Tensor& big = a_scalar ? b : a;
  const Tensor& small = a_scalar ? a : b;
  Tensor y = Tensor::from_flat((big.values().array() + small.values()[0]).matrix(),
                               big.shape(), rg);
  record("add", {a, b}, y, [big = big, small = small, y]() mutable {
    if (big.requires_grad()) big.grad_mut() += y.grad();
    if (small.requires_grad()) small.grad_mut()[0] += y.grad().sum();
  });
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const bool rg = any_grad({&a, &b});
  if (a.shape() == b.shape()) {
    Tensor y = Tensor::from_flat((a.values().array() * b.values().array()).matrix(),
                                 a.shape(), rg);
    record("mul", {a, b}, y, [a = a, b = b, y]() mutable {
      if (a.requires_grad()) {
        a.grad_mut().array() += y.grad().array() * b.values().array();
      }
      if (b.requires_grad()) {
        b.grad_mut().array() += y.grad().array() * a.values().array();
      }
    });
    return y;
  }
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  if (!a_scalar && !b_scalar) {
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const Tensor& big = a_scalar ? b : a;
  const Tensor& small = a_scalar ? a : b;
  Tensor y = Tensor::from_flat((big.values().array() * small.values()[0]).matrix(),
                               big.shape(), rg);
  record("mul", {a, b}, y, [big = big, small = small, y]() mutable {
    if (big.requires_grad()) {
      big.grad_mut().array() += y.grad().array() * small.values()[0];
    }
    if (small.requires_grad()) {
      small.grad_mut()[0] += (y.grad().array() * big.values().array()).sum();
    }
  });
  return y;
}

Tensor scale(const Tensor& a, Scalar s) {
  Tensor y = Tensor::from_flat(a.values() * s, a.shape(), a.requires_grad());
  record("scale", {a}, y, [a = a, y, s]() mutable { a.grad_mut() += s * y.grad(); });
  return y;
}

Tensor add_scalar(const Tensor& a, Scalar c) {
  Tensor y = Tensor::from_flat((a.values().array() + c).matrix(), a.shape(),
                               a.requires_grad());
  record("add_scalar", {a}, y, [a = a, y]() mutable { a.grad_mut() += y.grad(); });
  return y;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int rank = parts[0].rank();
  if (axis < 0 || axis >= rank) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(parts[0].shape()));
  }
  Shape out_shape = parts[0].shape();
  Index axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank) {
      throw ShapeError("concat: rank mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    for (int i = 0; i < rank; ++i) {
      if (i != axis && p.dim(i) != out_shape[static_cast<std::size_t>(i)]) {
        throw ShapeError("concat: shape mismatch " + shape_str(parts[0].shape()) + " vs " +
                         shape_str(p.shape()));
      }
    }
    axis_total += p.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = axis_total;

  AxisSplit s = split_axis(out_shape, axis);
  Vec out(shape_numel(out_shape));
  bool rg = false;
  for (const Tensor& p : parts) rg = rg || p.requires_grad();
  for (Index o = 0; o < s.outer; ++o) {
    Index cursor = 0;
    for (const Tensor& p : parts) {
      const Index block = p.dim(axis) * s.inner;
      out.segment(o * axis_total * s.inner + cursor, block) =
          p.values().segment(o * block, block);
      cursor += block;
    }
  }
  Tensor y = Tensor::from_flat(std::move(out), out_shape, rg);
  std::vector<Tensor> inputs = parts;
  record("concat", inputs, y, [parts, y, s, axis, axis_total]() mutable {
    for (Index o = 0; o < s.outer; ++o) {
      Index cursor = 0;
      for (Tensor p : parts) {
        const Index block = p.dim(axis) * s.inner;
        if (p.requires_grad()) {
          p.grad_mut().segment(o * block, block) +=
              y.grad().segment(o * axis_total * s.inner + cursor, block);
        }
        cursor += block;
      }
    }
  });
  return y;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no inputs");
  const Index d = rows[0].numel();
  bool rg = false;
  for (const Tensor& r : rows) {
    if (r.rank() != 1 || r.numel() != d) {
      throw ShapeError("stack_rows: expected vectors of width " + std::to_string(d) +
                       ", got " + shape_str(r.shape()));
    }
    rg = rg || r.requires_grad();
  }
  const Index k = static_cast<Index>(rows.size());
  Vec out(k * d);
  for (Index i = 0; i < k; ++i) {
    out.segment(i * d, d) = rows[static_cast<std::size_t>(i)].values();
  }
  Tensor y = Tensor::from_flat(std::move(out), {k, d}, rg);
  record("stack_rows", rows, y, [rows, y, d]() mutable {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Tensor r = rows[i];
      if (r.requires_grad()) {
        r.grad_mut() += y.grad().segment(static_cast<Index>(i) * d, d);
      }
    }
  });
  return y;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  Tensor y = Tensor::from_flat(a.values(), std::move(shape), a.requires_grad());
  record("reshape", {a}, y, [a = a, y]() mutable { a.grad_mut() += y.grad(); });
  return y;
}

Tensor gather_rows(const Tensor& a, const std::vector<Index>& indices) {
  if (a.rank() != 1 && a.rank() != 2) {
    throw ShapeError("gather_rows: rank-1 or rank-2 tensor required, shape " +
                     shape_str(a.shape()));
  }
  const Index limit = a.rank() == 1 ? a.numel() : a.rows();
  for (Index i : indices) {
    if (i < 0 || i >= limit) {
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for shape " +
                       shape_str(a.shape()));
    }
  }
  const Index k = static_cast<Index>(indices.size());
  const Index width = a.rank() == 1 ? 1 : a.cols();
  Vec out(k * width);
  for (Index i = 0; i < k; ++i) {
    out.segment(i * width, width) =
        a.values().segment(indices[static_cast<std::size_t>(i)] * width, width);
  }
  Shape out_shape = a.rank() == 1 ? Shape{k} : Shape{k, width};
  Tensor y = Tensor::from_flat(std::move(out), std::move(out_shape), a.requires_grad());
  record("gather_rows", {a}, y, [a = a, y, indices, width]() mutable {
    for (std::size_t i = 0; i < indices.size(); ++i) {
      a.grad_mut().segment(indices[i] * width, width) +=
          y.grad().segment(static_cast<Index>(i) * width, width);
    }
  });
  return y;
}

Tensor row(const Tensor& a, Index i) {
  if (a.rank() != 2) {
    throw ShapeError("row: rank-2 tensor required, shape " + shape_str(a.shape()));
  }
  return reshape(gather_rows(a, {i}), {a.cols()});
}

Tensor sum(const Tensor& a, int axis) {
  check_axis("sum", a, axis);
  AxisSplit s = split_axis(a.shape(), axis);
  if (s.n == 0) throw ShapeError("sum: empty axis in shape " + shape_str(a.shape()));
  Vec out = Vec::Zero(s.outer * s.inner);
  for (Index o = 0; o < s.outer; ++o) {
    for (Index j = 0; j < s.n; ++j) {
      out.segment(o * s.inner, s.inner) +=
          a.values().segment((o * s.n + j) * s.inner, s.inner);
    }
  }
  Tensor y = Tensor::from_flat(std::move(out), drop_axis(a.shape(), axis), a.requires_grad());
  record("sum", {a}, y, [a = a, y, s]() mutable {
    for (Index o = 0; o < s.outer; ++o) {
      for (Index j = 0; j < s.n; ++j) {
        a.grad_mut().segment((o * s.n + j) * s.inner, s.inner) +=
            y.grad().segment(o * s.inner, s.inner);
      }
    }
  });
  return y;
}

Tensor mean(const Tensor& a, int axis) {
  check_axis("mean", a, axis);
  AxisSplit s = split_axis(a.shape(), axis);
  if (s.n == 0) throw ShapeError("mean: empty axis in shape " + shape_str(a.shape()));
  Vec out = Vec::Zero(s.outer * s.inner);
  for (Index o = 0; o < s.outer; ++o) {
    for (Index j = 0; j < s.n; ++j) {
      out.segment(o * s.inner, s.inner) +=
          a.values().segment((o * s.n + j) * s.inner, s.inner);
    }
  }
  out /= static_cast<Scalar>(s.n);
  Tensor y = Tensor::from_flat(std::move(out), drop_axis(a.shape(), axis), a.requires_grad());
  record("mean", {a}, y, [a = a, y, s]() mutable {
    const Scalar inv = 1.0 / static_cast<Scalar>(s.n);
    for (Index o = 0; o < s.outer; ++o) {
      for (Index j = 0; j < s.n; ++j) {
        a.grad_mut().segment((o * s.n + j) * s.inner, s.inner) +=
            inv * y.grad().segment(o * s.inner, s.inner);
      }
    }
  });
  return y;
}

Tensor reduce_max(const Tensor& a, int axis) {
  check_axis("reduce_max", a, axis);
  AxisSplit s = split_axis(a.shape(), axis);
  if (s.n == 0) throw ShapeError("reduce_max: empty axis in shape " + shape_str(a.shape()));
  Vec out(s.outer * s.inner);
  std::vector<Index> argmax(static_cast<std::size_t>(s.outer * s.inner));
  for (Index o = 0; o < s.outer; ++o) {
    for (Index r = 0; r < s.inner; ++r) {
      Index best = 0;
      Scalar best_v = a.values()[(o * s.n) * s.inner + r];
      for (Index j = 1; j < s.n; ++j) {
        const Scalar v = a.values()[(o * s.n + j) * s.inner + r];
        if (v > best_v) {
          best_v = v;
          best = j;
        }
      }
      out[o * s.inner + r] = best_v;
      argmax[static_cast<std::size_t>(o * s.inner + r)] = best;
    }
  }
  Tensor y = Tensor::from_flat(std::move(out), drop_axis(a.shape(), axis), a.requires_grad());
  record("reduce_max", {a}, y, [a = a, y, s, argmax]() mutable {
    for (Index o = 0; o < s.outer; ++o) {
      for (Index r = 0; r < s.inner; ++r) {
        const Index j = argmax[static_cast<std::size_t>(o * s.inner + r)];
        a.grad_mut()[(o * s.n + j) * s.inner + r] += y.grad()[o * s.inner + r];
      }
    }
  });
  return y;
}

Tensor sum_all(const Tensor& a) {
  Tensor y = Tensor::scalar(a.values().sum(), a.requires_grad());
  record("sum_all", {a}, y, [a = a, y]() mutable {
    a.grad_mut().array() += y.grad()[0];
  });
  return y;
}

Tensor tanh(const Tensor& a) {
  Tensor y = Tensor::from_flat(a.values().array().tanh().matrix(), a.shape(),
                               a.requires_grad());
  record("tanh", {a}, y, [a = a, y]() mutable {
    a.grad_mut().array() += y.grad().array() * (1.0 - y.values().array().square());
  });
  return y;
}

Tensor sigmoid(const Tensor& a) {
  Vec out(a.numel());
  for (Index i = 0; i < a.numel(); ++i) {
    const Scalar x = a.values()[i];
    out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
  }
  Tensor y = Tensor::from_flat(std::move(out), a.shape(), a.requires_grad());
  record("sigmoid", {a}, y, [a = a, y]() mutable {
    a.grad_mut().array() +=
        y.grad().array() * y.values().array() * (1.0 - y.values().array());
  });
  return y;
}

Tensor log(const Tensor& a) {
  if ((a.values().array() <= 0.0).any()) {
    throw NumericalError("log: non-positive input");
  }
  Tensor y = Tensor::from_flat(a.values().array().log().matrix(), a.shape(),
                               a.requires_grad());
  record("log", {a}, y, [a = a, y]() mutable {
    a.grad_mut().array() += y.grad().array() / a.values().array();
  });
  return y;
}

Tensor clamp(const Tensor& a, Scalar lo, Scalar hi) {
  if (!(lo < hi)) throw ShapeError("clamp: lo must be below hi");
  Tensor y = Tensor::from_flat(a.values().array().max(lo).min(hi).matrix(), a.shape(),
                               a.requires_grad());
  record("clamp", {a}, y, [a = a, y, lo, hi]() mutable {
    for (Index i = 0; i < a.numel(); ++i) {
      const Scalar x = a.values()[i];
      if (x > lo && x < hi) a.grad_mut()[i] += y.grad()[i];
    }
  });
  return y;
}

Tensor leaky_relu(const Tensor& a, Scalar slope) {
  Vec out(a.numel());
  for (Index i = 0; i < a.numel(); ++i) {
    const Scalar x = a.values()[i];
    out[i] = x > 0 ? x : slope * x;
  }
  Tensor y = Tensor::from_flat(std::move(out), a.shape(), a.requires_grad());
  record("leaky_relu", {a}, y, [a = a, y, slope]() mutable {
    for (Index i = 0; i < a.numel(); ++i) {
      a.grad_mut()[i] += y.grad()[i] * (a.values()[i] > 0 ? 1.0 : slope);
    }
  });
  return y;
}

Tensor relu(const Tensor& a) { return leaky_relu(a, 0.0); }

Tensor softmax(const Tensor& a, int axis) {
  check_axis("softmax", a, axis);
  AxisSplit s = split_axis(a.shape(), axis);
  if (s.n == 0) throw ShapeError("softmax: empty axis in shape " + shape_str(a.shape()));
  Vec out(a.numel());
  for (Index o = 0; o < s.outer; ++o) {
    for (Index r = 0; r < s.inner; ++r) {
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (Index j = 0; j < s.n; ++j) {
        mx = std::max(mx, a.values()[(o * s.n + j) * s.inner + r]);
      }
      Scalar z = 0;
      for (Index j = 0; j < s.n; ++j) {
        const Scalar e = std::exp(a.values()[(o * s.n + j) * s.inner + r] - mx);
        out[(o * s.n + j) * s.inner + r] = e;
        z += e;
      }
      for (Index j = 0; j < s.n; ++j) out[(o * s.n + j) * s.inner + r] /= z;
    }
  }
  Tensor y = Tensor::from_flat(std::move(out), a.shape(), a.requires_grad());
  record("softmax", {a}, y, [a = a, y, s]() mutable {
    for (Index o = 0; o < s.outer; ++o) {
      for (Index r = 0; r < s.inner; ++r) {
        Scalar dot = 0;
        for (Index j = 0; j < s.n; ++j) {
          const Index k = (o * s.n + j) * s.inner + r;
          dot += y.grad()[k] * y.values()[k];
        }
        for (Index j = 0; j < s.n; ++j) {
          const Index k = (o * s.n + j) * s.inner + r;
          a.grad_mut()[k] += y.values()[k] * (y.grad()[k] - dot);
        }
      }
    }
  });
  if (g_softmax_observer) g_softmax_observer(y, axis);
  return y;
}

Tensor masked_softmax(const Tensor& a, const Tensor& mask, int axis) {
  check_axis("masked_softmax", a, axis);
  if (mask.shape() != a.shape()) {
    throw ShapeError("masked_softmax: mask shape " + shape_str(mask.shape()) +
                     " does not match input " + shape_str(a.shape()));
  }
  AxisSplit s = split_axis(a.shape(), axis);
  if (s.n == 0) {
    throw ShapeError("masked_softmax: empty axis in shape " + shape_str(a.shape()));
  }
  Vec out = Vec::Zero(a.numel());
  for (Index o = 0; o < s.outer; ++o) {
    for (Index r = 0; r < s.inner; ++r) {
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      Index live = 0;
      for (Index j = 0; j < s.n; ++j) {
        const Index k = (o * s.n + j) * s.inner + r;
        if (mask.values()[k] > 0.5) {
          mx = std::max(mx, a.values()[k]);
          ++live;
        }
      }
      if (live == 0) {
        throw NumericalError("masked_softmax: fully masked normalization group");
      }
      Scalar z = 0;
      for (Index j = 0; j < s.n; ++j) {
        const Index k = (o * s.n + j) * s.inner + r;
        if (mask.values()[k] > 0.5) {
          out[k] = std::exp(a.values()[k] - mx);
          z += out[k];
        }
      }
      for (Index j = 0; j < s.n; ++j) {
        const Index k = (o * s.n + j) * s.inner + r;
        if (mask.values()[k] > 0.5) out[k] /= z;
      }
    }
  }
  Tensor y = Tensor::from_flat(std::move(out), a.shape(), a.requires_grad());
  record("masked_softmax", {a, mask}, y, [a = a, mask = mask, y, s]() mutable {
    if (!a.requires_grad()) return;
    for (Index o = 0; o < s.outer; ++o) {
      for (Index r = 0; r < s.inner; ++r) {
        Scalar dot = 0;
        for (Index j = 0; j < s.n; ++j) {
          const Index k = (o * s.n + j) * s.inner + r;
          if (mask.values()[k] > 0.5) dot += y.grad()[k] * y.values()[k];
        }
        for (Index j = 0; j < s.n; ++j) {
          const Index k = (o * s.n + j) * s.inner + r;
          if (mask.values()[k] > 0.5) {
            a.grad_mut()[k] += y.values()[k] * (y.grad()[k] - dot);
          }
        }
      }
    }
  });
  if (g_softmax_observer) g_softmax_observer(y, axis);
  return y;
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, Scalar eps) {
  if (a.rank() < 1) throw ShapeError("layer_norm: empty shape");
  const Index n = a.shape().back();
  if (gain.rank() != 1 || gain.numel() != n || bias.rank() != 1 || bias.numel() != n) {
    throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " do not match last axis of " +
                     shape_str(a.shape()));
  }
  const Index groups = a.numel() / n;
  Vec out(a.numel());
  for (Index g = 0; g < groups; ++g) {
    auto x = a.values().segment(g * n, n);
    const Scalar mu = x.mean();
    const Scalar var = (x.array() - mu).square().mean();
    const Scalar inv = 1.0 / std::sqrt(var + eps);
    out.segment(g * n, n) =
        (((x.array() - mu) * inv) * gain.values().array() + bias.values().array()).matrix();
  }
  Tensor y = Tensor::from_flat(std::move(out), a.shape(), any_grad({&a, &gain, &bias}));
  record("layer_norm", {a, gain, bias}, y, [a = a, gain = gain, bias = bias, y, eps, n, groups]() mutable {
    for (Index g = 0; g < groups; ++g) {
      auto x = a.values().segment(g * n, n);
      auto gy = y.grad().segment(g * n, n);
      const Scalar mu = x.mean();
      const Scalar var = (x.array() - mu).square().mean();
      const Scalar inv = 1.0 / std::sqrt(var + eps);
      Eigen::ArrayXd xhat = (x.array() - mu) * inv;
      if (bias.requires_grad()) bias.grad_mut() += gy;
      if (gain.requires_grad()) {
        gain.grad_mut().array() += gy.array() * xhat;
      }
      if (a.requires_grad()) {
        Eigen::ArrayXd dxhat = gy.array() * gain.values().array();
        const Scalar m1 = dxhat.mean();
        const Scalar m2 = (dxhat * xhat).mean();
        a.grad_mut().segment(g * n, n).array() += inv * (dxhat - m1 - xhat * m2);
      }
    }
  });
  return y;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2) {
    throw ShapeError("affine: weight must be rank 2, shape " + shape_str(w.shape()));
  }
  const Index d = w.rows(), m = w.cols();
  if (b.rank() != 1 || b.numel() != m) {
    throw ShapeError("affine: bias shape " + shape_str(b.shape()) +
                     " does not match weight " + shape_str(w.shape()));
  }
  const bool vector_in = x.rank() == 1;
  const Index rows_n = vector_in ? 1 : x.rows();
  const Index x_cols = vector_in ? x.numel() : x.cols();
  if (x_cols != d) {
    throw ShapeError("affine: input shape " + shape_str(x.shape()) +
                     " does not match weight " + shape_str(w.shape()));
  }
  Vec out(rows_n * m);
  {
    ConstMatMap xm(x.values().data(), rows_n, d);
    MatMap om(out.data(), rows_n, m);
    om.noalias() = xm * w.mat();
    om.rowwise() += Eigen::RowVectorXd::Map(b.values().data(), m);
  }
  Shape out_shape = vector_in ? Shape{m} : Shape{rows_n, m};
  Tensor y = Tensor::from_flat(std::move(out), std::move(out_shape), any_grad({&x, &w, &b}));
  record("affine", {x, w, b}, y, [x = x, w = w, b = b, y, rows_n, d, m]() mutable {
    ConstMatMap g(y.grad().data(), rows_n, m);
    ConstMatMap xm(x.values().data(), rows_n, d);
    if (x.requires_grad()) {
      MatMap gx(x.grad_mut().data(), rows_n, d);
      gx.noalias() += g * w.mat().transpose();
    }
    if (w.requires_grad()) {
      MatMap gw(w.grad_mut().data(), d, m);
      gw.noalias() += xm.transpose() * g;
    }
    if (b.requires_grad()) {
      b.grad_mut() += g.colwise().sum().transpose();
    }
  });
  return y;
}

}  // namespace gtf
