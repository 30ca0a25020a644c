#include "svtr2/optim.hpp"

#include <cmath>

#include "svtr2/common.hpp"

namespace svtr2 {

template <class S>
AdamW<S>::AdamW(ParamRegistry<S>& params, AdamWHyper hyper) : params_(&params), hyper_(hyper) {
  if (hyper_.lr < 0 || hyper_.weight_decay < 0)
    throw ConfigError("optimizer: negative learning rate or weight decay");
  if (hyper_.beta1 < 0 || hyper_.beta1 >= 1 || hyper_.beta2 < 0 || hyper_.beta2 >= 1)
    throw ConfigError("optimizer: betas must lie in [0, 1)");
}

template <class S>
typename AdamW<S>::Slot& AdamW<S>::slot_for(const std::string& name,
                                            const std::vector<int>& shape) {
  for (Slot& s : slots_)
    if (s.name == name) {
      if (s.shape != shape)
        throw StateError(str_cat("optimizer state for '", name,
                                 "' was created for a different shape"));
      return s;
    }
  Slot s;
  s.name = name;
  s.shape = shape;
  std::size_t n = 1;
  for (int d : shape) n *= std::size_t(d);
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  slots_.push_back(std::move(s));
  return slots_.back();
}

template <class S>
void AdamW<S>::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(hyper_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(hyper_.beta2, double(t_));
  for (ParamEntry<S>& e : params_->entries()) {
    Slot& s = slot_for(e.name, e.tensor.shape());
    const std::size_t n = std::size_t(e.tensor.numel());
    S* theta = e.tensor.data();
    const bool has_g = e.tensor.has_grad();
    const S* g = has_g ? e.tensor.grad_vec().data() : nullptr;
    const double wd = e.no_decay ? 0.0 : hyper_.weight_decay;
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = has_g ? double(g[i]) : 0.0;
      s.m[i] = hyper_.beta1 * s.m[i] + (1.0 - hyper_.beta1) * gi;
      s.v[i] = hyper_.beta2 * s.v[i] + (1.0 - hyper_.beta2) * gi * gi;
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      const double pre = double(theta[i]);
      theta[i] = S(pre - hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.eps) - hyper_.lr * wd * pre);
    }
  }
}

template <class S>
void AdamW<S>::zero_grad() {
  for (ParamEntry<S>& e : params_->entries()) e.tensor.zero_grad();
}

template <class S>
double AdamW<S>::global_grad_norm() const {
  double ss = 0.0;
  for (const ParamEntry<S>& e : params_->entries())
    for (S gi : e.tensor.grad_vec()) ss += double(gi) * double(gi);
  return std::sqrt(ss);
}

template <class S>
double AdamW<S>::clip_grad_norm(double max_norm) {
  const double norm = global_grad_norm();
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (ParamEntry<S>& e : params_->entries()) {
      if (!e.tensor.has_grad()) continue;
      S* g = e.tensor.grad();
      for (long long i = 0; i < e.tensor.numel(); ++i) g[std::size_t(i)] = S(double(g[std::size_t(i)]) * f);
    }
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace svtr2
