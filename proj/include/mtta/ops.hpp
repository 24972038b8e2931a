#pragma once

// Differentiable primitives. Each returns a new node on the operands' graph.
// Elementwise binary ops accept equal shapes or leading-dimension expansion:
// the shorter operand's shape must be a suffix of the longer one's.

#include <cstddef>
#include <vector>

#include "mtta/graph.hpp"

namespace mtta::ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var minimum(Var a, Var b);  // elementwise select; ties take a

Var scale(Var x, double c);
Var add_scalar(Var x, double c);

// [M,K] x [K,N] -> [M,N]
Var matmul(Var a, Var b);
// x: [C,T] or [B,C,T]; w: [O,C,K]; bias: [O]. Zero padding.
Var conv1d(Var x, Var w, Var bias, std::size_t stride, std::size_t pad);
Var conv1d(Var x, Var w, std::size_t stride, std::size_t pad);

Var relu(Var x);  // subgradient 0 at 0
Var abs(Var x);   // subgradient 0 at 0
Var square(Var x);
Var sqrt(Var x);  // requires x > 0
Var sigmoid(Var x);
Var softplus(Var x);
Var smooth_l1(Var x);  // elementwise, transition at |x| = 1

Var sum(Var x);
Var mean(Var x);

Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(Var x, Shape shape);
// Prepends a leading dimension of size n by repetition.
Var broadcast(Var x, std::size_t n);
// Swaps the last two axes.
Var transpose(Var x);
// Repeats every entry along the last axis `factor` times.
Var upsample_nearest(Var x, std::size_t factor);

Var stop_gradient(Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }

}  // namespace mtta::ad
