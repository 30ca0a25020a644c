#pragma once

#include <string>
#include <vector>

#include "svtr2/charset.hpp"
#include "svtr2/model.hpp"
#include "svtr2/msr.hpp"

namespace svtr2 {

struct EvalOptions {
  ResizeMode resize = ResizeMode::msr;
  int threads = 0;          // 0 = read SVTR2_THREADS, defaulting to 1
  bool keep_predictions = false;
};

struct GroupStat {
  std::string name;
  long long count = 0;
  long long correct = 0;
  double accuracy() const { return count == 0 ? 0.0 : double(correct) / double(count); }
};

struct EvalReport {
  GroupStat overall;
  std::vector<GroupStat> by_bucket;   // aspect buckets R1..R4 present in the data
  std::vector<GroupStat> by_profile;  // parsed from the image filename tag
  std::vector<std::string> predictions;  // aligned with samples when kept
};

// Greedy-decoded word accuracy of `model` over `samples`, grouped overall,
// by aspect bucket of the source image, and by generator profile (the
// `_<profile>` suffix of the image filename; "unknown" when absent).
// Decoding runs per-sample at the model's native resize mode; with N threads
// the sample list is split into contiguous chunks whose results merge in
// index order, so the report is independent of the thread count.
// InputError on an empty sample list.
EvalReport evaluate(const Model<float>& model, const Charset& charset,
                    const std::vector<RawSample>& samples, const EvalOptions& options = {});

// Convenience wrapper: loads the checkpoint, verifies the dataset's charset
// hash against the checkpoint's (ConfigError on mismatch), loads the
// manifest, and evaluates.
EvalReport evaluate_checkpoint(const std::string& checkpoint_path,
                               const std::string& manifest_path,
                               const EvalOptions& options = {});

// CSV report: header `group,name,count,correct,accuracy`, then the overall
// row, one row per bucket, one per profile.
void write_eval_csv(const EvalReport& report, const std::string& path);

// "images/00042_rotated.pgm" -> "rotated"; "unknown" when the stem has no
// '_' tag.
std::string profile_from_source(const std::string& source_id);

}  // namespace svtr2
