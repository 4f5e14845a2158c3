#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "plglue/tape.hpp"

// Differentiable primitives. Every function checks its input shapes, records
// the output on the inputs' tape and, when tracing, the matching backward
// rule. Matrices are rank-2 row-major tensors.
namespace plg::ops {

using IndexPairs = std::vector<std::pair<std::size_t, std::size_t>>;

/// x[N,I] * w[O,I]^T + b[O]
template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b);

/// a[N,K] * b[K,M]
template <class T>
Var<T> matmul(Var<T> a, Var<T> b);

/// a[N,K] * b[M,K]^T
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b);

template <class T>
Var<T> transpose(Var<T> a);

/// Softmax of a matrix along `axis` (1: each row sums to one, 0: each column).
template <class T>
Var<T> softmax(Var<T> x, int axis);

/// Row softmax restricted to entries where mask(r,c) != 0. Masked entries are
/// exactly zero. Every row must keep at least one entry.
template <class T>
Var<T> masked_softmax(Var<T> x, const std::vector<std::uint8_t>& mask);

template <class T>
Var<T> sigmoid(Var<T> x);

/// Exact GELU, x * Phi(x).
template <class T>
Var<T> gelu(Var<T> x);

/// log(max(x, floor)); the gradient is zero where the clamp is active.
template <class T>
Var<T> log_clamped(Var<T> x, T floor);

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis);

template <class T>
Var<T> add(Var<T> a, Var<T> b);

template <class T>
Var<T> sub(Var<T> a, Var<T> b);

template <class T>
Var<T> mul(Var<T> a, Var<T> b);

/// Expands size-1 axes of a rank-2 tensor to `shape`.
template <class T>
Var<T> broadcast(Var<T> x, const Shape& shape);

/// scale * x + shift
template <class T>
Var<T> affine(Var<T> x, T scale, T shift);

/// Per-row normalisation over the last axis followed by gain and bias.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5));

/// Rotates consecutive pairs of every head block of x[N, H*K] by
/// angles[N, K/2]. The same angles are used for every head.
template <class T>
Var<T> rotary(Var<T> x, Var<T> angles);

template <class T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count);

template <class T>
Var<T> gather_rows(Var<T> x, const std::vector<std::size_t>& rows);

/// Copy of `base` with base[rows[i]] replaced by updates[i]. Other rows are
/// copied unchanged.
template <class T>
Var<T> scatter_rows(Var<T> base, const std::vector<std::size_t>& rows, Var<T> updates);

/// Picks x(r,c) for each pair into a rank-1 tensor.
template <class T>
Var<T> gather_elements(Var<T> x, const IndexPairs& pairs);

/// Elementwise max; ties take `a`.
template <class T>
Var<T> maximum(Var<T> a, Var<T> b);

template <class T>
Var<T> sum(Var<T> x);

/// Mean over all entries; empty input yields 0.
template <class T>
Var<T> mean(Var<T> x);

template <class T>
Var<T> reshape(Var<T> x, const Shape& shape);

}  // namespace plg::ops
