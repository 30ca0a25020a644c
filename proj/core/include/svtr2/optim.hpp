#pragma once

#include <string>
#include <vector>

#include "svtr2/model.hpp"
#include "svtr2/tensor.hpp"

namespace svtr2 {

// AdamW with decoupled weight decay: both the adaptive update and the decay
// term are computed from the PRE-update parameter value, i.e.
//   theta' = theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta.
// Entries flagged no_decay (normalization gains/biases, bias vectors) skip
// the decay term; everything else, embeddings and tokens included, decays.
struct AdamWHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <class S>
class AdamW {
 public:
  AdamW(ParamRegistry<S>& params, AdamWHyper hyper);

  void set_lr(double lr) { hyper_.lr = lr; }
  double lr() const { return hyper_.lr; }
  const AdamWHyper& hyper() const { return hyper_; }
  long long step_count() const { return t_; }

  // One update over every registered parameter. Parameters that never
  // received a gradient this step are treated as g = 0 (their moments decay
  // toward zero; with weight decay they still shrink). StateError when a
  // parameter's shape no longer matches its recorded optimizer state.
  void step();

  void zero_grad();

  // L2 norm over all parameter gradients (missing buffers count as zero).
  double global_grad_norm() const;
  // Scales gradients so the global norm is at most `max_norm`; returns the
  // pre-clip norm.
  double clip_grad_norm(double max_norm);

 private:
  struct Slot {
    std::string name;
    std::vector<int> shape;
    std::vector<double> m, v;
  };
  Slot& slot_for(const std::string& name, const std::vector<int>& shape);

  ParamRegistry<S>* params_;
  AdamWHyper hyper_;
  long long t_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace svtr2
