#pragma once

// Differentiable tensor operations.
//
// Elementwise binary ops accept either identical shapes or a right operand
// whose shape is a trailing suffix of the left one (a bias row, a per-token
// embedding); nothing else broadcasts. Violations raise ShapeError naming both
// shapes.

#include <cstddef>
#include <vector>

#include "detach/ad/graph.hpp"

namespace detach::ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);

// (..., n, k) x (k, m) -> (..., n, m); (B, n, k) x (B, k, m) -> (B, n, m).
Var matmul(Var a, Var b);

// Swaps the last two axes.
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length);

Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var square(Var a);
Var sqrt(Var a);

Var softmax(Var a, std::size_t axis);

// Normalizes over the last axis: (x - mean) / sqrt(var + eps). No affine part.
Var layer_norm(Var a, double eps = 1e-5);

Var sum(Var a);
Var mean(Var a);
Var sum(Var a, std::size_t axis);
Var mean(Var a, std::size_t axis);

// x: (..., T, C_in), w: (k, C_in, C_out). Zero "same" padding keeps T.
Var conv1d(Var x, Var w);

// (B, T, h*d) -> (B*h, T, d) and back. Rank-2 input is treated as B = 1.
Var split_heads(Var x, std::size_t heads);
Var merge_heads(Var x, std::size_t heads);

// Gradient passes where lo < x < hi and is zero outside.
Var clamp(Var a, double lo, double hi);
Var minimum(Var a, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator-(Var a) { return scale(a, -1.0); }

}  // namespace detach::ad
