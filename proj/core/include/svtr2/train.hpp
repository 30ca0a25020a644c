#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "svtr2/charset.hpp"
#include "svtr2/model.hpp"
#include "svtr2/msr.hpp"
#include "svtr2/tensor.hpp"

namespace svtr2 {

// Training configuration. `parse_train_config` reads a flat key=value text
// file using exactly these field names; '#' starts a comment.
struct TrainConfig {
  Variant variant = Variant::nano;
  FrmMode frm_mode = FrmMode::frm;
  double lr = 6.5e-4;            // peak rate at the 1024-sample reference batch
  double weight_decay = 0.05;
  double warmup_epochs = 1.5;
  int total_epochs = 10;         // per phase
  int batch_size = 64;
  double lambda1 = 0.1;          // recognition loss weight
  double lambda2 = 1.0;          // context loss weight
  std::string phases = "AB";     // "A", "B", or "AB"
  std::uint64_t seed = 0;
  ResizeMode resize = ResizeMode::msr;
  int sgm_window = 5;
  double val_fraction = 0.10;
  double clip_norm = 5.0;
  int max_label_len = 25;
  bool augment = false;

  std::string data;              // training manifest path
  std::string charset;           // defaults to <manifest dir>/charset.txt
  std::string out_dir = ".";
  std::string init_checkpoint;   // required when phases == "B"
};

// ConfigError on unknown keys, bad values, or violated invariants
// (negative loss weights, warmup_epochs >= total_epochs, ...).
TrainConfig parse_train_config(const std::string& path);
// Applies one "key=value" override (the CLI's --set flag).
void apply_override(TrainConfig& cfg, const std::string& keyval);
// Invariant check used by both the parser and train().
void validate(const TrainConfig& cfg);

// One optimization objective evaluation over a batch.
struct LossBreakdown {
  Tensor<float> total;        // scalar, connected to the tape
  double ctc = 0.0;           // batch-averaged recognition loss value
  double sgm = 0.0;           // batch-averaged context loss value (phase B)
  int used = 0;               // samples contributing to the averages
  int skipped_infeasible = 0; // labels too long for their frame count
};

// total = lambda1 * mean(ctc) + lambda2 * mean(context), averaged over the
// samples that can emit their label. `with_sgm` adds the context term and
// requires the branch to be present (StateError otherwise).
LossBreakdown total_loss(const Model<float>& model, const std::vector<RawSample>& samples,
                         const Batch& batch, bool with_sgm, double lambda1, double lambda2);

struct PhaseResult {
  std::string name;            // "A" or "B"
  std::string checkpoint;      // path written at phase end
  long long steps = 0;
  double final_val_accuracy = 0.0;
  long long skipped_infeasible = 0;
  long long clipped_steps = 0;
};

struct TrainReport {
  std::vector<PhaseResult> phases;
  std::string inference_checkpoint;
  long long dropped_long_labels = 0;  // labels over max_label_len
  int train_samples = 0;
  int val_samples = 0;
};

// Two-phase driver: recognition-only phase A, then phase B with a freshly
// initialized context branch, a fresh optimizer, and a re-warmed schedule.
// Writes phase_a.ckpt / phase_b.ckpt / inference.ckpt plus per-step and
// per-epoch CSV logs under cfg.out_dir. StateError (after dumping the batch)
// on a non-finite loss.
TrainReport train(const TrainConfig& cfg);

}  // namespace svtr2
