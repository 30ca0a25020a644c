#pragma once

#include <cmath>

#include "svtr2/common.hpp"

namespace svtr2 {

// One-cycle learning-rate schedule: linear ramp 0 -> peak across the warmup
// steps, then cosine decay from peak down to final_fraction * peak at the
// last step. at(0) == 0 and at(warmup_steps) == peak exactly.
class OneCycle {
 public:
  OneCycle(long long total_steps, long long warmup_steps, double peak,
           double final_fraction = 1e-6)
      : total_(total_steps), warmup_(warmup_steps), peak_(peak), final_(peak * final_fraction) {
    if (total_ <= 0) throw ConfigError(str_cat("schedule: total of ", total_, " steps"));
    if (warmup_ < 0 || warmup_ >= total_)
      throw ConfigError(
          str_cat("schedule: warmup of ", warmup_, " steps must be < total of ", total_));
    if (peak_ < 0) throw ConfigError("schedule: negative peak learning rate");
  }

  double at(long long step) const {
    if (step <= 0) return warmup_ == 0 ? peak_ : 0.0;
    if (step < warmup_) return peak_ * double(step) / double(warmup_);
    if (step >= total_) return final_;
    const double u = double(step - warmup_) / double(total_ - warmup_);
    return final_ + (peak_ - final_) * 0.5 * (1.0 + std::cos(u * 3.14159265358979323846));
  }

  long long total_steps() const { return total_; }
  long long warmup_steps() const { return warmup_; }
  double peak() const { return peak_; }

  // The reference peak rate scales linearly with batch size against a
  // 1024-sample baseline.
  static double scaled_peak(double base_lr, int batch_size) {
    return base_lr * double(batch_size) / 1024.0;
  }

 private:
  long long total_, warmup_;
  double peak_, final_;
};

}  // namespace svtr2
