#include "svtr2/ctc.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "svtr2/common.hpp"

namespace svtr2 {

namespace {

constexpr double kNegInf = -1e30;

double lse2(double a, double b) {
  double m = std::max(a, b);
  if (m <= kNegInf * 0.5) return kNegInf;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double lse3(double a, double b, double c) {
  double m = std::max(a, std::max(b, c));
  if (m <= kNegInf * 0.5) return kNegInf;
  return m + std::log(std::exp(a - m) + std::exp(b - m) + std::exp(c - m));
}

}  // namespace

int ctc_min_frames(const std::vector<int>& label) {
  int repeats = 0;
  for (std::size_t i = 1; i < label.size(); ++i)
    if (label[i] == label[i - 1]) ++repeats;
  return int(label.size()) + repeats;
}

template <class S>
Tensor<S> ctc_loss(const Tensor<S>& logits, const std::vector<int>& label) {
  if (!logits.defined() || logits.ndim() != 2)
    throw ShapeError(str_cat("ctc_loss: logits must be [T,C], got ",
                             logits.defined() ? shape_str(logits.shape()) : "undefined"));
  int t_len = logits.dim(0), c = logits.dim(1);
  if (c < 2) throw ShapeError(str_cat("ctc_loss: need >= 2 classes, got ", c));
  if (label.empty()) throw InputError("ctc_loss: empty label");
  int blank = c - 1;
  for (int v : label)
    if (v < 0 || v >= blank)
      throw InputError(str_cat("ctc_loss: label index ", v, " outside [0,", blank - 1, "]"));
  if (t_len < ctc_min_frames(label))
    throw InputError(str_cat("ctc_loss: infeasible alignment, ", t_len, " frames cannot emit ",
                             label.size(), " characters (need >= ", ctc_min_frames(label), ")"));

  // Extended label: blank, c1, blank, c2, ..., blank.
  int ext_len = 2 * int(label.size()) + 1;
  std::vector<int> ext(std::size_t(ext_len), blank);
  for (std::size_t i = 0; i < label.size(); ++i) ext[2 * i + 1] = label[i];

  // Per-frame log-softmax in double.
  const S* x = logits.data();
  std::vector<double> lsm(std::size_t(t_len) * c);
  for (int t = 0; t < t_len; ++t) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < c; ++k) mx = std::max(mx, double(x[std::size_t(t) * c + k]));
    double z = 0.0;
    for (int k = 0; k < c; ++k) z += std::exp(double(x[std::size_t(t) * c + k]) - mx);
    double lz = mx + std::log(z);
    for (int k = 0; k < c; ++k)
      lsm[std::size_t(t) * c + k] = double(x[std::size_t(t) * c + k]) - lz;
  }
  auto em = [&](int t, int s) { return lsm[std::size_t(t) * c + ext[std::size_t(s)]]; };
  // A state may skip over the preceding blank only when it is a character
  // different from the one two slots back.
  auto can_skip = [&](int s) {
    return s >= 2 && ext[std::size_t(s)] != blank && ext[std::size_t(s)] != ext[std::size_t(s - 2)];
  };

  std::vector<double> alpha(std::size_t(t_len) * ext_len, kNegInf);
  alpha[0] = em(0, 0);
  if (ext_len > 1) alpha[1] = em(0, 1);
  for (int t = 1; t < t_len; ++t)
    for (int s = 0; s < ext_len; ++s) {
      double best = alpha[std::size_t(t - 1) * ext_len + s];
      if (s >= 1) best = lse2(best, alpha[std::size_t(t - 1) * ext_len + s - 1]);
      if (can_skip(s)) best = lse2(best, alpha[std::size_t(t - 1) * ext_len + s - 2]);
      alpha[std::size_t(t) * ext_len + s] = best <= kNegInf * 0.5 ? kNegInf : best + em(t, s);
    }
  double logp = lse2(alpha[std::size_t(t_len - 1) * ext_len + ext_len - 1],
                     ext_len > 1 ? alpha[std::size_t(t_len - 1) * ext_len + ext_len - 2] : kNegInf);
  if (logp <= kNegInf * 0.5)
    throw StateError("ctc_loss: alignment probability underflowed to zero");
  double loss = -logp;

  Tensor<S> out = Tensor<S>::from({1}, {S(loss)});
  check_finite(out, "ctc_loss");
  if (!recording<S>({&logits})) return out;

  // Gradient via the companion backward recursion: with alpha and beta both
  // carrying the frame-t emission, the posterior of class k at frame t is
  // sum_{s: ext[s]=k} exp(alpha + beta - emission - logp), and
  // d loss / d logit[t,k] = softmax[t,k] - posterior[t,k].
  std::vector<double> beta(std::size_t(t_len) * ext_len, kNegInf);
  beta[std::size_t(t_len - 1) * ext_len + ext_len - 1] = em(t_len - 1, ext_len - 1);
  if (ext_len > 1)
    beta[std::size_t(t_len - 1) * ext_len + ext_len - 2] = em(t_len - 1, ext_len - 2);
  for (int t = t_len - 2; t >= 0; --t)
    for (int s = 0; s < ext_len; ++s) {
      double best = beta[std::size_t(t + 1) * ext_len + s];
      if (s + 1 < ext_len) best = lse2(best, beta[std::size_t(t + 1) * ext_len + s + 1]);
      if (s + 2 < ext_len && can_skip(s + 2))
        best = lse2(best, beta[std::size_t(t + 1) * ext_len + s + 2]);
      beta[std::size_t(t) * ext_len + s] = best <= kNegInf * 0.5 ? kNegInf : best + em(t, s);
    }

  auto grad = std::make_shared<std::vector<double>>(std::size_t(t_len) * c);
  for (int t = 0; t < t_len; ++t) {
    std::vector<double> post(std::size_t(c), kNegInf);
    for (int s = 0; s < ext_len; ++s) {
      double a = alpha[std::size_t(t) * ext_len + s], b = beta[std::size_t(t) * ext_len + s];
      if (a <= kNegInf * 0.5 || b <= kNegInf * 0.5) continue;
      int k = ext[std::size_t(s)];
      post[std::size_t(k)] = lse2(post[std::size_t(k)], a + b - em(t, s));
    }
    for (int k = 0; k < c; ++k) {
      double p = post[std::size_t(k)] <= kNegInf * 0.5 ? 0.0 : std::exp(post[std::size_t(k)] - logp);
      (*grad)[std::size_t(t) * c + k] = std::exp(lsm[std::size_t(t) * c + k]) - p;
    }
  }

  out.mark_output();
  Tape<S>::active()->record(out.impl(), [li = logits.impl(), oi = out.impl(), grad]() {
    if (oi->grad.empty() || !li->requires_grad) return;
    li->ensure_grad();
    S g = oi->grad[0];
    for (std::size_t i = 0; i < grad->size(); ++i) li->grad[i] += g * S((*grad)[i]);
  });
  return out;
}

template Tensor<float> ctc_loss<float>(const Tensor<float>&, const std::vector<int>&);
template Tensor<double> ctc_loss<double>(const Tensor<double>&, const std::vector<int>&);

double ctc_loss_bruteforce(const Tensor<double>& logits, const std::vector<int>& label) {
  if (!logits.defined() || logits.ndim() != 2)
    throw ShapeError("ctc_loss_bruteforce: logits must be [T,C]");
  int t_len = logits.dim(0), c = logits.dim(1);
  double combos = std::pow(double(c), double(t_len));
  if (combos > 1e7)
    throw InputError(str_cat("ctc_loss_bruteforce: ", c, "^", t_len, " paths is too large"));
  int blank = c - 1;

  // Plain-probability softmax, written independently of the DP's version.
  const double* x = logits.data();
  std::vector<double> prob(std::size_t(t_len) * c);
  for (int t = 0; t < t_len; ++t) {
    double denom = 0.0;
    for (int k = 0; k < c; ++k) denom += std::exp(x[std::size_t(t) * c + k]);
    for (int k = 0; k < c; ++k)
      prob[std::size_t(t) * c + k] = std::exp(x[std::size_t(t) * c + k]) / denom;
  }

  std::vector<int> path(std::size_t(t_len), 0);
  double total = 0.0;
  while (true) {
    // Collapse: merge equal neighbours, then drop blanks.
    std::vector<int> collapsed;
    for (int t = 0; t < t_len; ++t) {
      int v = path[std::size_t(t)];
      if (t > 0 && v == path[std::size_t(t - 1)]) continue;
      if (v != blank) collapsed.push_back(v);
    }
    if (collapsed == label) {
      double p = 1.0;
      for (int t = 0; t < t_len; ++t) p *= prob[std::size_t(t) * c + path[std::size_t(t)]];
      total += p;
    }
    int pos = t_len - 1;
    while (pos >= 0 && ++path[std::size_t(pos)] == c) {
      path[std::size_t(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  if (total <= 0.0) return std::numeric_limits<double>::infinity();
  return -std::log(total);
}

template <class S>
DecodedText greedy_decode(const Tensor<S>& logits) {
  if (!logits.defined() || logits.ndim() != 2)
    throw ShapeError("greedy_decode: logits must be [T,C]");
  int t_len = logits.dim(0), c = logits.dim(1);
  int blank = c - 1;
  const S* x = logits.data();
  DecodedText out;
  out.frame_argmax.reserve(std::size_t(t_len));
  int prev = -1;
  for (int t = 0; t < t_len; ++t) {
    int best = 0;
    for (int k = 1; k < c; ++k)
      if (x[std::size_t(t) * c + k] > x[std::size_t(t) * c + best]) best = k;
    out.frame_argmax.push_back(best);
    if (best != prev && best != blank) out.indices.push_back(best);
    prev = best;
  }
  return out;
}

template DecodedText greedy_decode<float>(const Tensor<float>&);
template DecodedText greedy_decode<double>(const Tensor<double>&);

std::string normalize_text(const std::string& text) {
  std::string out;
  for (char ch : text) {
    auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) out.push_back(char(std::tolower(u)));
  }
  return out;
}

double word_accuracy(const std::vector<std::string>& predictions,
                     const std::vector<std::string>& references) {
  if (predictions.size() != references.size())
    throw InputError(str_cat("word_accuracy: ", predictions.size(), " predictions vs ",
                             references.size(), " references"));
  if (references.empty()) throw InputError("word_accuracy: empty reference list");
  int hits = 0;
  for (std::size_t i = 0; i < references.size(); ++i)
    if (normalize_text(predictions[i]) == normalize_text(references[i])) ++hits;
  return double(hits) / double(references.size());
}

}  // namespace svtr2
