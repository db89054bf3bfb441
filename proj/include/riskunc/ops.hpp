#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "riskunc/tensor.hpp"

namespace riskunc {

enum class UnaryOp { kSigmoid, kTanh, kRelu, kExp, kLog, kSoftplus, kSquare, kNeg };
enum class BinaryOp { kAdd, kSub, kMul };
enum class ReduceOp { kSum, kMean, kMax, kMin };

// Every op below checks its output for NaN/Inf and throws NumericError
// instead of propagating them.

Tensor elementwise(UnaryOp op, const Tensor& a);
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);

inline Tensor sigmoid(const Tensor& a) { return elementwise(UnaryOp::kSigmoid, a); }
inline Tensor tanh(const Tensor& a) { return elementwise(UnaryOp::kTanh, a); }
inline Tensor relu(const Tensor& a) { return elementwise(UnaryOp::kRelu, a); }
inline Tensor exp(const Tensor& a) { return elementwise(UnaryOp::kExp, a); }
/// Throws NumericError on any non-positive input.
inline Tensor log(const Tensor& a) { return elementwise(UnaryOp::kLog, a); }
inline Tensor softplus(const Tensor& a) { return elementwise(UnaryOp::kSoftplus, a); }
inline Tensor square(const Tensor& a) { return elementwise(UnaryOp::kSquare, a); }
inline Tensor neg(const Tensor& a) { return elementwise(UnaryOp::kNeg, a); }
inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kAdd, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kSub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kMul, a, b); }

/// a * factor + offset, elementwise.
Tensor affine(const Tensor& a, double factor, double offset = 0.0);

/// [m x k] x [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Adds a length-n (or 1 x n) row vector to every row of an m x n matrix.
Tensor add_row(const Tensor& x, const Tensor& row);

/// Row-wise softmax over an n x K matrix, K >= 2.
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);

/// Full reduction when axis is empty, otherwise reduction over one axis.
/// max/min route the gradient to the first extremal index.
Tensor reduce(ReduceOp op, const Tensor& a, std::optional<std::size_t> axis = std::nullopt);

inline Tensor sum(const Tensor& a) { return reduce(ReduceOp::kSum, a); }
inline Tensor mean(const Tensor& a) { return reduce(ReduceOp::kMean, a); }

/// Horizontal concatenation of 2-D tensors with equal row counts.
Tensor concat_cols(std::span<const Tensor> parts);
/// Columns [begin, end) of a 2-D tensor.
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);

/// Rows of a 2-D table, one per id.
Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids);

/// Mean of table rows per bag. An empty bag yields row `empty_row`.
Tensor bag_mean(const Tensor& table, std::span<const std::vector<std::int32_t>> bags, std::int32_t empty_row);

/// Row r comes from `updated` when keep[r] is true, otherwise from `previous`.
Tensor select_rows(const std::vector<bool>& keep, const Tensor& updated, const Tensor& previous);

/// Mean binary cross-entropy of n x 1 logits against {0,1} labels.
Tensor bce_with_logits(const Tensor& logits, std::span<const int> labels);
/// Mean categorical cross-entropy of n x K logits against class indices.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Local gradient rule of a custom op: reads self.grad and accumulates into
/// the parents' grad buffers.
using GradRule = std::function<void(detail::Node& self)>;

/// Wraps precomputed values as an op result. History is recorded only when
/// grad mode is on and some parent requires a gradient.
Tensor custom_op(Shape shape, std::vector<double> value, std::vector<std::shared_ptr<detail::Node>> parents,
                 GradRule rule, const char* name);

}  // namespace riskunc
