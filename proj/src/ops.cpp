#include "riskunc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "riskunc/error.hpp"

namespace riskunc {

namespace {

using NodePtr = std::shared_ptr<detail::Node>;
using Backward = std::function<void(detail::Node&)>;

constexpr double kSigmoidUpper = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
constexpr double kSigmoidLower = std::numeric_limits<double>::min();

void check_finite(const std::vector<double>& values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

// Wraps a freshly computed value as a graph node. History is attached only
// when recording is on and some input needs a gradient.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<NodePtr> parents, Backward rule,
                   const char* op) {
  check_finite(value, op);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool needs_grad =
      grad_enabled() && std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
  if (needs_grad) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(rule);
  }
  return Tensor(std::move(node));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + to_string(a.shape()));
}

double stable_sigmoid(double x) {
  double s;
  if (x >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    s = e / (1.0 + e);
  }
  return std::clamp(s, kSigmoidLower, kSigmoidUpper);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

const char* unary_name(UnaryOp op) {
  switch (op) {
    case UnaryOp::kSigmoid: return "sigmoid";
    case UnaryOp::kTanh: return "tanh";
    case UnaryOp::kRelu: return "relu";
    case UnaryOp::kExp: return "exp";
    case UnaryOp::kLog: return "log";
    case UnaryOp::kSoftplus: return "softplus";
    case UnaryOp::kSquare: return "square";
    case UnaryOp::kNeg: return "neg";
  }
  return "unary";
}

}  // namespace

Tensor custom_op(Shape shape, std::vector<double> value, std::vector<NodePtr> parents, GradRule rule,
                 const char* name) {
  return make_result(std::move(shape), std::move(value), std::move(parents), std::move(rule), name);
}

Tensor elementwise(UnaryOp op, const Tensor& a) {
  const auto in = a.data();
  std::vector<double> out(in.size());
  if (op == UnaryOp::kLog) {
    for (double v : in) {
      if (!(v > 0.0)) throw NumericError("log of non-positive value " + std::to_string(v));
    }
  }
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double x = in[i];
    switch (op) {
      case UnaryOp::kSigmoid: out[i] = stable_sigmoid(x); break;
      case UnaryOp::kTanh: out[i] = std::tanh(x); break;
      case UnaryOp::kRelu: out[i] = x > 0.0 ? x : 0.0; break;
      case UnaryOp::kExp: out[i] = std::exp(x); break;
      case UnaryOp::kLog: out[i] = std::log(x); break;
      case UnaryOp::kSoftplus: out[i] = stable_softplus(x); break;
      case UnaryOp::kSquare: out[i] = x * x; break;
      case UnaryOp::kNeg: out[i] = -x; break;
    }
  }
  NodePtr pa = a.node();
  auto rule = [pa, op](detail::Node& self) {
    auto& g = pa->grad_buffer();
    const auto& x = pa->value;
    const auto& y = self.value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double up = self.grad[i];
      double local = 0.0;
      switch (op) {
        case UnaryOp::kSigmoid: local = y[i] * (1.0 - y[i]); break;
        case UnaryOp::kTanh: local = 1.0 - y[i] * y[i]; break;
        case UnaryOp::kRelu: local = x[i] > 0.0 ? 1.0 : 0.0; break;
        case UnaryOp::kExp: local = y[i]; break;
        case UnaryOp::kLog: local = 1.0 / x[i]; break;
        case UnaryOp::kSoftplus: local = stable_sigmoid(x[i]); break;
        case UnaryOp::kSquare: local = 2.0 * x[i]; break;
        case UnaryOp::kNeg: local = -1.0; break;
      }
      g[i] += up * local;
    }
  };
  return make_result(a.shape(), std::move(out), {pa}, std::move(rule), unary_name(op));
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    switch (op) {
      case BinaryOp::kAdd: out[i] = x[i] + y[i]; break;
      case BinaryOp::kSub: out[i] = x[i] - y[i]; break;
      case BinaryOp::kMul: out[i] = x[i] * y[i]; break;
    }
  }
  NodePtr pa = a.node();
  NodePtr pb = b.node();
  auto rule = [pa, pb, op](detail::Node& self) {
    const auto& up = self.grad;
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += op == BinaryOp::kMul ? up[i] * pb->value[i] : up[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        switch (op) {
          case BinaryOp::kAdd: g[i] += up[i]; break;
          case BinaryOp::kSub: g[i] -= up[i]; break;
          case BinaryOp::kMul: g[i] += up[i] * pa->value[i]; break;
        }
      }
    }
  };
  return make_result(a.shape(), std::move(out), {pa, pb}, std::move(rule), "elementwise");
}

Tensor affine(const Tensor& a, double factor, double offset) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor + offset;
  NodePtr pa = a.node();
  auto rule = [pa, factor](detail::Node& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  };
  return make_result(a.shape(), std::move(out), {pa}, std::move(rule), "affine");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      if (xv == 0.0) continue;
      const double* yrow = y.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += xv * yrow[j];
    }
  }
  NodePtr pa = a.node();
  NodePtr pb = b.node();
  auto rule = [pa, pb, m, k, n](detail::Node& self) {
    const auto& up = self.grad;
    if (pa->requires_grad) {
      // dA = dC * B^T
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* brow = pb->value.data() + p * n;
          const double* urow = up.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) acc += urow[j] * brow[j];
          g[i * k + p] += acc;
        }
      }
    }
    if (pb->requires_grad) {
      // dB = A^T * dC
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        const double* urow = up.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa->value[i * k + p];
          if (av == 0.0) continue;
          double* grow = g.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) grow[j] += av * urow[j];
        }
      }
    }
  };
  return make_result({m, n}, std::move(out), {pa, pb}, std::move(rule), "matmul");
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  require_matrix(x, "add_row");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (row.size() != n || (row.rank() == 2 && row.dim(0) != 1) || row.rank() > 2) {
    throw ShapeError("add_row: bias " + to_string(row.shape()) + " does not fit " + to_string(x.shape()));
  }
  const auto xv = x.data();
  const auto bv = row.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  }
  NodePtr px = x.node();
  NodePtr pb = row.node();
  auto rule = [px, pb, m, n](detail::Node& self) {
    if (px->requires_grad) {
      auto& g = px->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
      }
    }
  };
  return make_result({m, n}, std::move(out), {px, pb}, std::move(rule), "add_row");
}

namespace {

void check_logits(const Tensor& logits, const char* op) {
  require_matrix(logits, op);
  if (logits.dim(1) < 2) throw ShapeError(std::string(op) + ": needs at least two classes");
  for (double v : logits.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite logits");
  }
}

}  // namespace

Tensor softmax(const Tensor& logits) {
  check_logits(logits, "softmax");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const auto z = logits.data();
  std::vector<double> out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = z.data() + i * k;
    const double top = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += out[i * k + j] = std::exp(row[j] - top);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= total;
  }
  NodePtr pz = logits.node();
  auto rule = [pz, n, k](detail::Node& self) {
    auto& g = pz->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += self.grad[i * k + j] * self.value[i * k + j];
      for (std::size_t j = 0; j < k; ++j) g[i * k + j] += self.value[i * k + j] * (self.grad[i * k + j] - dot);
    }
  };
  return make_result({n, k}, std::move(out), {pz}, std::move(rule), "softmax");
}

Tensor log_softmax(const Tensor& logits) {
  check_logits(logits, "log_softmax");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const auto z = logits.data();
  std::vector<double> out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = z.data() + i * k;
    const double top = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(row[j] - top);
    const double lse = top + std::log(total);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = row[j] - lse;
  }
  NodePtr pz = logits.node();
  auto rule = [pz, n, k](detail::Node& self) {
    auto& g = pz->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < k; ++j) total += self.grad[i * k + j];
      for (std::size_t j = 0; j < k; ++j) g[i * k + j] += self.grad[i * k + j] - std::exp(self.value[i * k + j]) * total;
    }
  };
  return make_result({n, k}, std::move(out), {pz}, std::move(rule), "log_softmax");
}

Tensor reduce(ReduceOp op, const Tensor& a, std::optional<std::size_t> axis) {
  const Shape& shape = a.shape();
  if (a.size() == 0) throw ShapeError("reduce over an empty tensor");
  std::size_t outer = 1, extent = a.size(), inner = 1;
  Shape out_shape;
  if (axis) {
    if (*axis >= shape.size()) {
      throw ShapeError("reduce: invalid axis " + std::to_string(*axis) + " for " + to_string(shape));
    }
    extent = shape[*axis];
    for (std::size_t d = 0; d < *axis; ++d) outer *= shape[d];
    for (std::size_t d = *axis + 1; d < shape.size(); ++d) inner *= shape[d];
    for (std::size_t d = 0; d < shape.size(); ++d) {
      if (d != *axis) out_shape.push_back(shape[d]);
    }
  }
  const auto x = a.data();
  std::vector<double> out(outer * inner);
  // For max/min: flat index of the first extremal element per output slot.
  std::vector<std::size_t> pick(out.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t slot = o * inner + in;
      const std::size_t base = o * extent * inner + in;
      double acc = x[base];
      std::size_t best = base;
      if (op == ReduceOp::kSum || op == ReduceOp::kMean) {
        acc = 0.0;
        for (std::size_t e = 0; e < extent; ++e) acc += x[base + e * inner];
        if (op == ReduceOp::kMean) acc /= static_cast<double>(extent);
      } else {
        for (std::size_t e = 1; e < extent; ++e) {
          const double v = x[base + e * inner];
          if (op == ReduceOp::kMax ? v > acc : v < acc) {
            acc = v;
            best = base + e * inner;
          }
        }
      }
      out[slot] = acc;
      pick[slot] = best;
    }
  }
  NodePtr pa = a.node();
  auto rule = [pa, op, outer, extent, inner, pick = std::move(pick)](detail::Node& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t slot = o * inner + in;
        const double up = self.grad[slot];
        if (op == ReduceOp::kMax || op == ReduceOp::kMin) {
          g[pick[slot]] += up;
          continue;
        }
        const double share = op == ReduceOp::kMean ? up / static_cast<double>(extent) : up;
        const std::size_t base = o * extent * inner + in;
        for (std::size_t e = 0; e < extent; ++e) g[base + e * inner] += share;
      }
    }
  };
  return make_result(std::move(out_shape), std::move(out), {pa}, std::move(rule), "reduce");
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const std::size_t m = parts.front().rank() == 2 ? parts.front().dim(0) : 0;
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.dim(0) != m) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(p.dim(1));
    total += p.dim(1);
    parents.push_back(p.node());
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (std::size_t t = 0; t < parts.size(); ++t) {
    const auto v = parts[t].data();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(v.data() + i * widths[t], widths[t], out.data() + i * total + offset);
    }
    offset += widths[t];
  }
  auto rule = [parents, widths, m, total](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t t = 0; t < parents.size(); ++t) {
      if (parents[t]->requires_grad) {
        auto& g = parents[t]->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < widths[t]; ++j) g[i * widths[t] + j] += self.grad[i * total + off + j];
        }
      }
      off += widths[t];
    }
  };
  return make_result({m, total}, std::move(out), parents, std::move(rule), "concat_cols");
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_cols");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (begin > end || end > n) throw ShapeError("slice_cols: range out of bounds");
  const std::size_t w = end - begin;
  const auto v = a.data();
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(v.data() + i * n + begin, w, out.data() + i * w);
  NodePtr pa = a.node();
  auto rule = [pa, m, n, w, begin](detail::Node& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
    }
  };
  return make_result({m, w}, std::move(out), {pa}, std::move(rule), "slice_cols");
}

Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids) {
  require_matrix(table, "gather_rows");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      throw IndexError("row id " + std::to_string(id) + " out of range [0, " + std::to_string(rows) + ")");
    }
  }
  const auto v = table.data();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) std::copy_n(v.data() + ids[i] * d, d, out.data() + i * d);
  NodePtr pt = table.node();
  std::vector<std::int32_t> kept(ids.begin(), ids.end());
  auto rule = [pt, d, kept = std::move(kept)](detail::Node& self) {
    auto& g = pt->grad_buffer();
    for (std::size_t i = 0; i < kept.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) g[kept[i] * d + j] += self.grad[i * d + j];
    }
  };
  return make_result({ids.size(), d}, std::move(out), {pt}, std::move(rule), "gather_rows");
}

Tensor bag_mean(const Tensor& table, std::span<const std::vector<std::int32_t>> bags, std::int32_t empty_row) {
  require_matrix(table, "bag_mean");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  auto check = [rows](std::int32_t id) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      throw IndexError("row id " + std::to_string(id) + " out of range [0, " + std::to_string(rows) + ")");
    }
  };
  check(empty_row);
  for (const auto& bag : bags) {
    for (auto id : bag) check(id);
  }
  const auto v = table.data();
  std::vector<double> out(bags.size() * d, 0.0);
  for (std::size_t b = 0; b < bags.size(); ++b) {
    double* dst = out.data() + b * d;
    if (bags[b].empty()) {
      std::copy_n(v.data() + empty_row * d, d, dst);
      continue;
    }
    for (auto id : bags[b]) {
      for (std::size_t j = 0; j < d; ++j) dst[j] += v[id * d + j];
    }
    const double inv = 1.0 / static_cast<double>(bags[b].size());
    for (std::size_t j = 0; j < d; ++j) dst[j] *= inv;
  }
  NodePtr pt = table.node();
  std::vector<std::vector<std::int32_t>> kept(bags.begin(), bags.end());
  auto rule = [pt, d, empty_row, kept = std::move(kept)](detail::Node& self) {
    auto& g = pt->grad_buffer();
    for (std::size_t b = 0; b < kept.size(); ++b) {
      const double* up = self.grad.data() + b * d;
      if (kept[b].empty()) {
        for (std::size_t j = 0; j < d; ++j) g[empty_row * d + j] += up[j];
        continue;
      }
      const double inv = 1.0 / static_cast<double>(kept[b].size());
      for (auto id : kept[b]) {
        for (std::size_t j = 0; j < d; ++j) g[id * d + j] += up[j] * inv;
      }
    }
  };
  return make_result({bags.size(), d}, std::move(out), {pt}, std::move(rule), "bag_mean");
}

Tensor select_rows(const std::vector<bool>& keep, const Tensor& updated, const Tensor& previous) {
  require_same_shape(updated, previous, "select_rows");
  require_matrix(updated, "select_rows");
  const std::size_t m = updated.dim(0), n = updated.dim(1);
  if (keep.size() != m) throw ShapeError("select_rows: mask length differs from row count");
  const auto u = updated.data();
  const auto p = previous.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) std::copy_n((keep[i] ? u : p).data() + i * n, n, out.data() + i * n);
  NodePtr pu = updated.node();
  NodePtr pp = previous.node();
  auto rule = [pu, pp, keep, m, n](detail::Node& self) {
    for (std::size_t i = 0; i < m; ++i) {
      auto& target = keep[i] ? pu : pp;
      if (!target->requires_grad) continue;
      auto& g = target->grad_buffer();
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j];
    }
  };
  return make_result({m, n}, std::move(out), {pu, pp}, std::move(rule), "select_rows");
}

Tensor bce_with_logits(const Tensor& logits, std::span<const int> labels) {
  require_matrix(logits, "bce_with_logits");
  const std::size_t n = logits.dim(0);
  if (logits.dim(1) != 1 || labels.size() != n || n == 0) {
    throw ShapeError("bce_with_logits: expected n x 1 logits with n labels");
  }
  const auto z = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw Error("bce_with_logits: labels must be 0 or 1");
    total += stable_softplus(z[i]) - labels[i] * z[i];
  }
  NodePtr pz = logits.node();
  std::vector<int> kept(labels.begin(), labels.end());
  auto rule = [pz, n, kept = std::move(kept)](detail::Node& self) {
    auto& g = pz->grad_buffer();
    const double up = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) g[i] += up * (stable_sigmoid(pz->value[i]) - kept[i]);
  };
  return make_result({}, {total / static_cast<double>(n)}, {pz}, std::move(rule), "bce_with_logits");
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_logits(logits, "cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n || n == 0) throw ShapeError("cross_entropy: expected one label per row");
  const auto z = logits.data();
  std::vector<double> probs(n * k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) throw IndexError("cross_entropy: label out of range");
    const double* row = z.data() + i * k;
    const double top = *std::max_element(row, row + k);
    double sum_exp = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum_exp += probs[i * k + j] = std::exp(row[j] - top);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= sum_exp;
    total += top + std::log(sum_exp) - row[labels[i]];
  }
  NodePtr pz = logits.node();
  std::vector<int> kept(labels.begin(), labels.end());
  auto rule = [pz, n, k, probs = std::move(probs), kept = std::move(kept)](detail::Node& self) {
    auto& g = pz->grad_buffer();
    const double up = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double target = static_cast<int>(j) == kept[i] ? 1.0 : 0.0;
        g[i * k + j] += up * (probs[i * k + j] - target);
      }
    }
  };
  return make_result({}, {total / static_cast<double>(n)}, {pz}, std::move(rule), "cross_entropy");
}

}  // namespace riskunc
