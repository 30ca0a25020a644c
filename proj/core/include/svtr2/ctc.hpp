#pragma once

#include <string>
#include <vector>

#include "svtr2/tensor.hpp"

namespace svtr2 {

// Alignment-based sequence loss over [T, C] frame logits, where class C-1 is
// the blank and classes 0..C-2 are charset indices. Internally runs entirely
// in double regardless of S; differentiable through the tape.
//
// Throws InputError when T is too short to emit the label (fewer frames than
// characters plus the blanks forced between repeated characters).
template <class S>
Tensor<S> ctc_loss(const Tensor<S>& logits, const std::vector<int>& label);

// Minimum frame count that can emit `label`: length plus one separator per
// adjacent repeated pair.
int ctc_min_frames(const std::vector<int>& label);

// Test oracle: enumerates every C^T frame path, keeps those whose collapse
// (merge equal runs, drop blanks) equals `label`, and returns -log of their
// total probability (+inf when no path matches). Implemented from scratch,
// sharing nothing with ctc_loss. Instances with C^T > 10^7 are rejected.
double ctc_loss_bruteforce(const Tensor<double>& logits, const std::vector<int>& label);

struct DecodedText {
  std::vector<int> indices;       // collapsed, blank-free
  std::vector<int> frame_argmax;  // raw per-frame winners, for diagnostics
};

// Best-path decode: per-frame argmax (ties to the lowest class index),
// collapse equal runs, drop blanks.
template <class S>
DecodedText greedy_decode(const Tensor<S>& logits);

// Exact-match rate after lowercasing and dropping non-alphanumeric bytes.
double word_accuracy(const std::vector<std::string>& predictions,
                     const std::vector<std::string>& references);

std::string normalize_text(const std::string& text);

}  // namespace svtr2
