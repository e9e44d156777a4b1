#pragma once

#include <vector>

#include "hf/rng.hpp"
#include "hf/tensor.hpp"

namespace hf::ops {

// Every op computes eagerly and, when `tape` is non-null and any input
// requires grad, records its backward rule on the tape. Passing tape ==
// nullptr runs the pure forward path (inference).

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
// scale * a + shift, elementwise with constants.
Tensor affine(Tape* tape, const Tensor& a, double scale, double shift);

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
// Batched matmul: [B,m,k] x [B,k,n] -> [B,m,n].
Tensor bmm(Tape* tape, const Tensor& a, const Tensor& b);

// Valid 1-D convolution along the last axis, stride 1, no padding.
// input [Cin,L] or batched [N,Cin,L]; filters [Cout,Cin,K]; bias [Cout].
// Output length is L-K+1.
Tensor conv1d_valid(Tape* tape, const Tensor& input, const Tensor& filters,
                    const Tensor& bias);

Tensor relu(Tape* tape, const Tensor& a);
Tensor sigmoid(Tape* tape, const Tensor& a);
Tensor tanh(Tape* tape, const Tensor& a);

// Softmax along `axis`, stabilized by max subtraction.
Tensor softmax(Tape* tape, const Tensor& a, std::size_t axis);

// Inverted dropout: zero with probability p and scale survivors by 1/(1-p)
// in training mode; identity in inference mode. Requires 0 <= p < 1.
Tensor dropout(Tape* tape, const Tensor& a, double p, bool training, Rng& rng);

Tensor reshape(Tape* tape, const Tensor& a, Shape target);
Tensor permute(Tape* tape, const Tensor& a, const std::vector<std::size_t>& order);
Tensor concat(Tape* tape, const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(Tape* tape, const Tensor& a, std::size_t axis, std::size_t start,
             std::size_t length);

Tensor sum(Tape* tape, const Tensor& a);
Tensor mean(Tape* tape, const Tensor& a);

// Row-wise scale: x [m,n] with s [m] (or [m,1]) -> diag(s) * x.
Tensor scale_rows(Tape* tape, const Tensor& x, const Tensor& s);
// Broadcast add of b [n] over the rows of x [m,n].
Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& b);

}  // namespace hf::ops
