#include "deari/graph.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <unordered_set>

namespace deari {

using Mat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const Mat>;
using MMap = Eigen::Map<Mat>;

namespace {

NodePtr make_node(const char* op, Array value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  n->requires_grad = needs;
  if (needs) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

enum class Broadcast { same, row_last };

Broadcast binary_mode(const char* op, const Array& a, const Array& b) {
  if (a.same_shape(b)) return Broadcast::same;
  if (b.rank() == 1 && a.rank() >= 1 && a.dim(a.rank() - 1) == b.dim(0)) return Broadcast::row_last;
  throw ShapeError(op, a.shape_string() + " vs " + b.shape_string());
}

int64_t last_dim(const Array& a) { return a.dim(a.rank() - 1); }

void require_rank(const char* op, const Array& a, int64_t r) {
  if (a.rank() != r) {
    throw ShapeError(op, "expected rank " + std::to_string(r) + ", got " + a.shape_string());
  }
}

// Elementwise unary op factory: f(value), df(value, out) -> local derivative.
template <typename F, typename DF>
NodePtr unary(const char* op, const NodePtr& a, F f, DF df) {
  Array out(a->value.shape());
  const int64_t n = a->value.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = f(a->value[i]);
  return make_node(op, std::move(out), {a}, [df](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    const int64_t n = self.value.numel();
    for (int64_t i = 0; i < n; ++i) p.grad[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

real stable_sigmoid(real x) {
  if (x >= 0) return real(1) / (real(1) + std::exp(-x));
  const real e = std::exp(x);
  return e / (real(1) + e);
}

real stable_softplus(real x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace

NodePtr leaf(Array v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  return n;
}

NodePtr constant(Array v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = false;
  return n;
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
  const Broadcast mode = binary_mode("add", a->value, b->value);
  Array out(a->value.shape());
  const int64_t n = a->value.numel();
  if (mode == Broadcast::same) {
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
  } else {
    const int64_t k = last_dim(a->value);
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i % k];
  }
  return make_node("add", std::move(out), {a, b}, [mode](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const int64_t n = self.value.numel();
    if (pa.requires_grad) {
      for (int64_t i = 0; i < n; ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      if (mode == Broadcast::same) {
        for (int64_t i = 0; i < n; ++i) pb.grad[i] += self.grad[i];
      } else {
        const int64_t k = pb.value.numel();
        for (int64_t i = 0; i < n; ++i) pb.grad[i % k] += self.grad[i];
      }
    }
  });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
  const Broadcast mode = binary_mode("sub", a->value, b->value);
  Array out(a->value.shape());
  const int64_t n = a->value.numel();
  if (mode == Broadcast::same) {
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i];
  } else {
    const int64_t k = last_dim(a->value);
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i % k];
  }
  return make_node("sub", std::move(out), {a, b}, [mode](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const int64_t n = self.value.numel();
    if (pa.requires_grad) {
      for (int64_t i = 0; i < n; ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      if (mode == Broadcast::same) {
        for (int64_t i = 0; i < n; ++i) pb.grad[i] -= self.grad[i];
      } else {
        const int64_t k = pb.value.numel();
        for (int64_t i = 0; i < n; ++i) pb.grad[i % k] -= self.grad[i];
      }
    }
  });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
  const Broadcast mode = binary_mode("mul", a->value, b->value);
  Array out(a->value.shape());
  const int64_t n = a->value.numel();
  if (mode == Broadcast::same) {
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
  } else {
    const int64_t k = last_dim(a->value);
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i % k];
  }
  return make_node("mul", std::move(out), {a, b}, [mode](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const int64_t n = self.value.numel();
    if (mode == Broadcast::same) {
      if (pa.requires_grad) {
        for (int64_t i = 0; i < n; ++i) pa.grad[i] += self.grad[i] * pb.value[i];
      }
      if (pb.requires_grad) {
        for (int64_t i = 0; i < n; ++i) pb.grad[i] += self.grad[i] * pa.value[i];
      }
    } else {
      const int64_t k = pb.value.numel();
      if (pa.requires_grad) {
        for (int64_t i = 0; i < n; ++i) pa.grad[i] += self.grad[i] * pb.value[i % k];
      }
      if (pb.requires_grad) {
        for (int64_t i = 0; i < n; ++i) pb.grad[i % k] += self.grad[i] * pa.value[i];
      }
    }
  });
}

NodePtr scale(const NodePtr& a, real c) {
  Array out(a->value.shape());
  const int64_t n = a->value.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * c;
  return make_node("scale", std::move(out), {a}, [c](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    const int64_t n = self.value.numel();
    for (int64_t i = 0; i < n; ++i) p.grad[i] += self.grad[i] * c;
  });
}

NodePtr shift(const NodePtr& a, real c) {
  Array out(a->value.shape());
  const int64_t n = a->value.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] + c;
  return make_node("shift", std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    const int64_t n = self.value.numel();
    for (int64_t i = 0; i < n; ++i) p.grad[i] += self.grad[i];
  });
}

NodePtr neg(const NodePtr& a) { return scale(a, real(-1)); }

NodePtr exp_op(const NodePtr& a) {
  return unary("exp", a, [](real x) { return std::exp(x); },
               [](real, real y) { return y; });
}

NodePtr log_op(const NodePtr& a) {
  return unary("log", a, [](real x) { return std::log(x); },
               [](real x, real) { return real(1) / x; });
}

NodePtr sqrt_op(const NodePtr& a) {
  return unary("sqrt", a, [](real x) { return std::sqrt(x); },
               [](real, real y) { return real(0.5) / y; });
}

NodePtr abs_op(const NodePtr& a) {
  return unary("abs", a, [](real x) { return std::abs(x); },
               [](real x, real) { return x > 0 ? real(1) : (x < 0 ? real(-1) : real(0)); });
}

NodePtr relu(const NodePtr& a) {
  return unary("relu", a, [](real x) { return x > 0 ? x : real(0); },
               [](real x, real) { return x > 0 ? real(1) : real(0); });
}

NodePtr sigmoid(const NodePtr& a) {
  return unary("sigmoid", a, [](real x) { return stable_sigmoid(x); },
               [](real, real y) { return y * (real(1) - y); });
}

NodePtr tanh_op(const NodePtr& a) {
  return unary("tanh", a, [](real x) { return std::tanh(x); },
               [](real, real y) { return real(1) - y * y; });
}

NodePtr softplus(const NodePtr& a) {
  return unary("softplus", a, [](real x) { return stable_softplus(x); },
               [](real x, real) { return stable_sigmoid(x); });
}

NodePtr square(const NodePtr& a) {
  return unary("square", a, [](real x) { return x * x; },
               [](real x, real) { return real(2) * x; });
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
  const Array& av = a->value;
  const Array& bv = b->value;
  require_rank("matmul", bv, 2);
  if (av.rank() != 2 && av.rank() != 3) throw ShapeError("matmul", "left operand " + av.shape_string());
  const int64_t k = last_dim(av);
  if (k != bv.dim(0)) throw ShapeError("matmul", av.shape_string() + " x " + bv.shape_string());
  const int64_t m = av.numel() / k;
  const int64_t n = bv.dim(1);

  Shape out_shape = av.shape();
  out_shape.back() = n;
  Array out(std::move(out_shape));
  MMap(out.data(), m, n) = CMap(av.data(), m, k) * CMap(bv.data(), k, n);
  return make_node("matmul", std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    CMap g(self.grad.data(), m, n);
    if (pa.requires_grad) {
      MMap(pa.grad.data(), m, k).noalias() += g * CMap(pb.value.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      MMap(pb.grad.data(), k, n).noalias() += CMap(pa.value.data(), m, k).transpose() * g;
    }
  });
}

NodePtr bmm(const NodePtr& a, const NodePtr& b) {
  const Array& av = a->value;
  const Array& bv = b->value;
  require_rank("bmm", av, 3);
  require_rank("bmm", bv, 3);
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
    throw ShapeError("bmm", av.shape_string() + " x " + bv.shape_string());
  }
  const int64_t batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
  Array out({batch, m, n});
  for (int64_t i = 0; i < batch; ++i) {
    MMap(out.data() + i * m * n, m, n) =
        CMap(av.data() + i * m * k, m, k) * CMap(bv.data() + i * k * n, k, n);
  }
  return make_node("bmm", std::move(out), {a, b}, [batch, m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (int64_t i = 0; i < batch; ++i) {
      CMap g(self.grad.data() + i * m * n, m, n);
      if (pa.requires_grad) {
        MMap(pa.grad.data() + i * m * k, m, k).noalias() +=
            g * CMap(pb.value.data() + i * k * n, k, n).transpose();
      }
      if (pb.requires_grad) {
        MMap(pb.grad.data() + i * k * n, k, n).noalias() +=
            CMap(pa.value.data() + i * m * k, m, k).transpose() * g;
      }
    }
  });
}

NodePtr bmm_nt(const NodePtr& a, const NodePtr& b) {
  const Array& av = a->value;
  const Array& bv = b->value;
  require_rank("bmm_nt", av, 3);
  require_rank("bmm_nt", bv, 3);
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2)) {
    throw ShapeError("bmm_nt", av.shape_string() + " x " + bv.shape_string());
  }
  const int64_t batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(1);
  Array out({batch, m, n});
  for (int64_t i = 0; i < batch; ++i) {
    MMap(out.data() + i * m * n, m, n) =
        CMap(av.data() + i * m * k, m, k) * CMap(bv.data() + i * n * k, n, k).transpose();
  }
  return make_node("bmm_nt", std::move(out), {a, b}, [batch, m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (int64_t i = 0; i < batch; ++i) {
      CMap g(self.grad.data() + i * m * n, m, n);
      if (pa.requires_grad) {
        MMap(pa.grad.data() + i * m * k, m, k).noalias() +=
            g * CMap(pb.value.data() + i * n * k, n, k);
      }
      if (pb.requires_grad) {
        MMap(pb.grad.data() + i * n * k, n, k).noalias() +=
            g.transpose() * CMap(pa.value.data() + i * m * k, m, k);
      }
    }
  });
}

NodePtr transpose(const NodePtr& a) {
  require_rank("transpose", a->value, 2);
  const int64_t m = a->value.dim(0), n = a->value.dim(1);
  Array out({n, m});
  MMap(out.data(), n, m) = CMap(a->value.data(), m, n).transpose();
  return make_node("transpose", std::move(out), {a}, [m, n](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    MMap(p.grad.data(), m, n).noalias() += CMap(self.grad.data(), n, m).transpose();
  });
}

NodePtr concat_rows(const NodePtr& a, const NodePtr& b) {
  const Array& av = a->value;
  const Array& bv = b->value;
  require_rank("concat_rows", av, 2);
  require_rank("concat_rows", bv, 2);
  if (av.dim(1) != bv.dim(1)) {
    throw ShapeError("concat_rows", av.shape_string() + " vs " + bv.shape_string());
  }
  const int64_t ma = av.dim(0), mb = bv.dim(0), k = av.dim(1);
  Array out({ma + mb, k});
  for (int64_t i = 0; i < av.numel(); ++i) out[i] = av[i];
  for (int64_t i = 0; i < bv.numel(); ++i) out[ma * k + i] = bv[i];
  return make_node("concat_rows", std::move(out), {a, b}, [ma, mb, k](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      for (int64_t i = 0; i < ma * k; ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      for (int64_t i = 0; i < mb * k; ++i) pb.grad[i] += self.grad[ma * k + i];
    }
  });
}

NodePtr concat_last(const NodePtr& a, const NodePtr& b) {
  const Array& av = a->value;
  const Array& bv = b->value;
  if (av.rank() != bv.rank()) throw ShapeError("concat_last", av.shape_string() + " vs " + bv.shape_string());
  for (int64_t i = 0; i + 1 < av.rank(); ++i) {
    if (av.dim(i) != bv.dim(i)) throw ShapeError("concat_last", av.shape_string() + " vs " + bv.shape_string());
  }
  const int64_t ka = last_dim(av), kb = last_dim(bv);
  const int64_t rows = av.numel() / ka;
  Shape out_shape = av.shape();
  out_shape.back() = ka + kb;
  Array out(std::move(out_shape));
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < ka; ++j) out[r * (ka + kb) + j] = av[r * ka + j];
    for (int64_t j = 0; j < kb; ++j) out[r * (ka + kb) + ka + j] = bv[r * kb + j];
  }
  return make_node("concat_last", std::move(out), {a, b}, [rows, ka, kb](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (int64_t r = 0; r < rows; ++r) {
      if (pa.requires_grad) {
        for (int64_t j = 0; j < ka; ++j) pa.grad[r * ka + j] += self.grad[r * (ka + kb) + j];
      }
      if (pb.requires_grad) {
        for (int64_t j = 0; j < kb; ++j) pb.grad[r * kb + j] += self.grad[r * (ka + kb) + ka + j];
      }
    }
  });
}

NodePtr slice_last(const NodePtr& a, int64_t offset, int64_t len) {
  const Array& av = a->value;
  const int64_t k = last_dim(av);
  if (offset < 0 || len <= 0 || offset + len > k) {
    throw ShapeError("slice_last", "range [" + std::to_string(offset) + ", " +
                                       std::to_string(offset + len) + ") of " + av.shape_string());
  }
  const int64_t rows = av.numel() / k;
  Shape out_shape = av.shape();
  out_shape.back() = len;
  Array out(std::move(out_shape));
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < len; ++j) out[r * len + j] = av[r * k + offset + j];
  }
  return make_node("slice_last", std::move(out), {a}, [rows, k, offset, len](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t j = 0; j < len; ++j) p.grad[r * k + offset + j] += self.grad[r * len + j];
    }
  });
}

NodePtr stack_axis1(const std::vector<NodePtr>& steps) {
  if (steps.empty()) throw ShapeError("stack_axis1", "empty sequence");
  const Array& first = steps[0]->value;
  require_rank("stack_axis1", first, 2);
  const int64_t b = first.dim(0), h = first.dim(1);
  const int64_t s = static_cast<int64_t>(steps.size());
  for (const auto& n : steps) {
    if (!n->value.same_shape(first)) {
      throw ShapeError("stack_axis1", first.shape_string() + " vs " + n->value.shape_string());
    }
  }
  Array out({b, s, h});
  for (int64_t i = 0; i < s; ++i) {
    const Array& v = steps[static_cast<size_t>(i)]->value;
    for (int64_t bi = 0; bi < b; ++bi) {
      for (int64_t j = 0; j < h; ++j) out.at(bi, i, j) = v.at(bi, j);
    }
  }
  return make_node("stack_axis1", std::move(out), steps, [b, s, h](Node& self) {
    for (int64_t i = 0; i < s; ++i) {
      Node& p = *self.parents[static_cast<size_t>(i)];
      if (!p.requires_grad) continue;
      for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t j = 0; j < h; ++j) p.grad.at(bi, j) += self.grad.at(bi, i, j);
      }
    }
  });
}

NodePtr concat_axis1(const NodePtr& a, const NodePtr& b) {
  const Array& av = a->value;
  const Array& bv = b->value;
  require_rank("concat_axis1", av, 3);
  require_rank("concat_axis1", bv, 3);
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2)) {
    throw ShapeError("concat_axis1", av.shape_string() + " vs " + bv.shape_string());
  }
  const int64_t batch = av.dim(0), sa = av.dim(1), sb = bv.dim(1), h = av.dim(2);
  Array out({batch, sa + sb, h});
  for (int64_t bi = 0; bi < batch; ++bi) {
    for (int64_t i = 0; i < sa; ++i)
      for (int64_t j = 0; j < h; ++j) out.at(bi, i, j) = av.at(bi, i, j);
    for (int64_t i = 0; i < sb; ++i)
      for (int64_t j = 0; j < h; ++j) out.at(bi, sa + i, j) = bv.at(bi, i, j);
  }
  return make_node("concat_axis1", std::move(out), {a, b}, [batch, sa, sb, h](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (int64_t bi = 0; bi < batch; ++bi) {
      if (pa.requires_grad) {
        for (int64_t i = 0; i < sa; ++i)
          for (int64_t j = 0; j < h; ++j) pa.grad.at(bi, i, j) += self.grad.at(bi, i, j);
      }
      if (pb.requires_grad) {
        for (int64_t i = 0; i < sb; ++i)
          for (int64_t j = 0; j < h; ++j) pb.grad.at(bi, i, j) += self.grad.at(bi, sa + i, j);
      }
    }
  });
}

NodePtr slice_axis1(const NodePtr& a, int64_t offset, int64_t len) {
  const Array& av = a->value;
  require_rank("slice_axis1", av, 3);
  if (offset < 0 || len <= 0 || offset + len > av.dim(1)) {
    throw ShapeError("slice_axis1", "range [" + std::to_string(offset) + ", " +
                                        std::to_string(offset + len) + ") of " + av.shape_string());
  }
  const int64_t batch = av.dim(0), s = av.dim(1), h = av.dim(2);
  Array out({batch, len, h});
  for (int64_t bi = 0; bi < batch; ++bi) {
    for (int64_t i = 0; i < len; ++i)
      for (int64_t j = 0; j < h; ++j) out.at(bi, i, j) = av.at(bi, offset + i, j);
  }
  return make_node("slice_axis1", std::move(out), {a}, [batch, s, h, offset, len](Node& self) {
    (void)s;
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (int64_t bi = 0; bi < batch; ++bi) {
      for (int64_t i = 0; i < len; ++i)
        for (int64_t j = 0; j < h; ++j) p.grad.at(bi, offset + i, j) += self.grad.at(bi, i, j);
    }
  });
}

NodePtr mean_axis1(const NodePtr& a) {
  const Array& av = a->value;
  require_rank("mean_axis1", av, 3);
  const int64_t batch = av.dim(0), s = av.dim(1), h = av.dim(2);
  Array out({batch, h});
  const real inv = real(1) / static_cast<real>(s);
  for (int64_t bi = 0; bi < batch; ++bi) {
    for (int64_t j = 0; j < h; ++j) {
      real acc = 0;
      for (int64_t i = 0; i < s; ++i) acc += av.at(bi, i, j);
      out.at(bi, j) = acc * inv;
    }
  }
  return make_node("mean_axis1", std::move(out), {a}, [batch, s, h, inv](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (int64_t bi = 0; bi < batch; ++bi) {
      for (int64_t j = 0; j < h; ++j) {
        const real g = self.grad.at(bi, j) * inv;
        for (int64_t i = 0; i < s; ++i) p.grad.at(bi, i, j) += g;
      }
    }
  });
}

NodePtr repeat_rows(const NodePtr& row, int64_t count) {
  const Array& rv = row->value;
  require_rank("repeat_rows", rv, 2);
  if (rv.dim(0) != 1) throw ShapeError("repeat_rows", "expected [1,H], got " + rv.shape_string());
  const int64_t h = rv.dim(1);
  Array out({count, 1, h});
  for (int64_t b = 0; b < count; ++b) {
    for (int64_t j = 0; j < h; ++j) out.at(b, 0, j) = rv.at(0, j);
  }
  return make_node("repeat_rows", std::move(out), {row}, [count, h](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (int64_t b = 0; b < count; ++b) {
      for (int64_t j = 0; j < h; ++j) p.grad.at(0, j) += self.grad.at(b, 0, j);
    }
  });
}

NodePtr sum_all(const NodePtr& a) {
  real acc = 0;
  const int64_t n = a->value.numel();
  for (int64_t i = 0; i < n; ++i) acc += a->value[i];
  return make_node("sum", Array::scalar(acc), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    const real g = self.grad[0];
    const int64_t n = p.value.numel();
    for (int64_t i = 0; i < n; ++i) p.grad[i] += g;
  });
}

NodePtr mean_all(const NodePtr& a) {
  const int64_t n = a->value.numel();
  real acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += a->value[i];
  const real inv = real(1) / static_cast<real>(n);
  return make_node("mean", Array::scalar(acc * inv), {a}, [inv](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    const real g = self.grad[0] * inv;
    const int64_t n = p.value.numel();
    for (int64_t i = 0; i < n; ++i) p.grad[i] += g;
  });
}

NodePtr softmax_last(const NodePtr& a) {
  const Array& av = a->value;
  const int64_t k = last_dim(av);
  const int64_t rows = av.numel() / k;
  Array out(av.shape());
  for (int64_t r = 0; r < rows; ++r) {
    real mx = av[r * k];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, av[r * k + j]);
    real z = 0;
    for (int64_t j = 0; j < k; ++j) {
      const real e = std::exp(av[r * k + j] - mx);
      out[r * k + j] = e;
      z += e;
    }
    for (int64_t j = 0; j < k; ++j) out[r * k + j] /= z;
  }
  return make_node("softmax", std::move(out), {a}, [rows, k](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (int64_t r = 0; r < rows; ++r) {
      real dot = 0;
      for (int64_t j = 0; j < k; ++j) dot += self.grad[r * k + j] * self.value[r * k + j];
      for (int64_t j = 0; j < k; ++j) {
        p.grad[r * k + j] += self.value[r * k + j] * (self.grad[r * k + j] - dot);
      }
    }
  });
}

NodePtr layer_norm_last(const NodePtr& a) {
  constexpr real kEps = real(1e-8);
  const Array& av = a->value;
  const int64_t k = last_dim(av);
  const int64_t rows = av.numel() / k;
  Array out(av.shape());
  std::vector<real> inv_std(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    real mean = 0;
    for (int64_t j = 0; j < k; ++j) mean += av[r * k + j];
    mean /= static_cast<real>(k);
    real var = 0;
    for (int64_t j = 0; j < k; ++j) {
      const real d = av[r * k + j] - mean;
      var += d * d;
    }
    var /= static_cast<real>(k);
    const real inv = real(1) / std::sqrt(var + kEps);
    inv_std[static_cast<size_t>(r)] = inv;
    for (int64_t j = 0; j < k; ++j) out[r * k + j] = (av[r * k + j] - mean) * inv;
  }
  return make_node("layer_norm", std::move(out), {a},
                   [rows, k, inv_std = std::move(inv_std)](Node& self) {
                     Node& p = *self.parents[0];
                     if (!p.requires_grad) return;
                     for (int64_t r = 0; r < rows; ++r) {
                       real gmean = 0, gydot = 0;
                       for (int64_t j = 0; j < k; ++j) {
                         gmean += self.grad[r * k + j];
                         gydot += self.grad[r * k + j] * self.value[r * k + j];
                       }
                       gmean /= static_cast<real>(k);
                       gydot /= static_cast<real>(k);
                       const real inv = inv_std[static_cast<size_t>(r)];
                       for (int64_t j = 0; j < k; ++j) {
                         p.grad[r * k + j] +=
                             inv * (self.grad[r * k + j] - gmean - self.value[r * k + j] * gydot);
                       }
                     }
                   });
}

NodePtr l2_normalize_rows(const NodePtr& a) {
  constexpr real kTiny = real(1e-12);
  const Array& av = a->value;
  const int64_t k = last_dim(av);
  const int64_t rows = av.numel() / k;
  Array out(av.shape());
  std::vector<real> norms(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    real sq = 0;
    for (int64_t j = 0; j < k; ++j) sq += av[r * k + j] * av[r * k + j];
    const real nrm = std::sqrt(sq);
    norms[static_cast<size_t>(r)] = nrm;
    const real inv = nrm > kTiny ? real(1) / nrm : real(1);
    for (int64_t j = 0; j < k; ++j) out[r * k + j] = av[r * k + j] * inv;
  }
  return make_node("l2_normalize", std::move(out), {a},
                   [rows, k, norms = std::move(norms)](Node& self) {
                     Node& p = *self.parents[0];
                     if (!p.requires_grad) return;
                     for (int64_t r = 0; r < rows; ++r) {
                       const real nrm = norms[static_cast<size_t>(r)];
                       if (nrm <= kTiny) {
                         for (int64_t j = 0; j < k; ++j) p.grad[r * k + j] += self.grad[r * k + j];
                         continue;
                       }
                       real dot = 0;
                       for (int64_t j = 0; j < k; ++j) dot += self.grad[r * k + j] * self.value[r * k + j];
                       const real inv = real(1) / nrm;
                       for (int64_t j = 0; j < k; ++j) {
                         p.grad[r * k + j] += inv * (self.grad[r * k + j] - self.value[r * k + j] * dot);
                       }
                     }
                   });
}

NodePtr log1p_sum_exp_rows(const NodePtr& a, const Array& mask) {
  const Array& av = a->value;
  require_rank("log1p_sum_exp_rows", av, 2);
  if (!av.same_shape(mask)) {
    throw ShapeError("log1p_sum_exp_rows", av.shape_string() + " vs mask " + mask.shape_string());
  }
  const int64_t rows = av.dim(0), k = av.dim(1);
  Array out({rows});
  for (int64_t r = 0; r < rows; ++r) {
    real mx = 0;  // the implicit "+1" term is exp(0)
    for (int64_t j = 0; j < k; ++j) {
      if (mask.at(r, j) != 0) mx = std::max(mx, av.at(r, j));
    }
    real acc = std::exp(-mx);
    for (int64_t j = 0; j < k; ++j) {
      if (mask.at(r, j) != 0) acc += std::exp(av.at(r, j) - mx);
    }
    out[r] = mx + std::log(acc);
  }
  return make_node("log1p_sum_exp_rows", std::move(out), {a}, [rows, k, mask](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (int64_t r = 0; r < rows; ++r) {
      const real g = self.grad[r];
      for (int64_t j = 0; j < k; ++j) {
        if (mask.at(r, j) != 0) p.grad.at(r, j) += g * std::exp(p.value.at(r, j) - self.value[r]);
      }
    }
  });
}

void backward(const NodePtr& root) {
  if (root->value.numel() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got shape " +
                                root->value.shape_string());
  }
  // Post-order DFS; `order` ends with the root, producers before consumers.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* node;
    size_t next;
  };
  std::vector<Frame> stack;
  if (root->requires_grad) {
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
  }
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      Node* p = f.node->parents[f.next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->zero_grad();
  root->ensure_grad();
  if (root->requires_grad) {
    root->grad[0] = 1;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward_fn) n->backward_fn(*n);
    }
  } else {
    root->grad.fill(0);
    root->grad[0] = 1;
  }
}

}  // namespace deari
