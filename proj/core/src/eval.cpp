#include "svtr2/eval.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>
#include <vector>

#include "svtr2/checkpoint.hpp"
#include "svtr2/common.hpp"
#include "svtr2/ctc.hpp"
#include "svtr2/image.hpp"

namespace fs = std::filesystem;

namespace svtr2 {

namespace {

const char* bucket_name(BucketId id) {
  switch (id) {
    case BucketId::R1: return "R1";
    case BucketId::R2: return "R2";
    case BucketId::R3: return "R3";
    case BucketId::R4: return "R4";
  }
  return "R?";
}

struct SampleResult {
  std::string prediction;
  bool correct = false;
};

SampleResult score_sample(const Model<float>& model, const Charset& charset,
                          const RawSample& s, ResizeMode resize) {
  AspectBucket target = target_for(resize, s.image.h, s.image.w);
  Image r3 = with_channels(resize_bilinear(s.image, target.height, target.width), 3);
  std::vector<float> data(r3.data.begin(), r3.data.end());
  Tensor<float> img = Tensor<float>::from({3, target.height, target.width}, std::move(data));
  DecodedText decoded = greedy_decode(model.forward(img).logits);
  SampleResult out;
  out.prediction = charset.decode(decoded.indices);
  out.correct = normalize_text(out.prediction) == normalize_text(charset.decode(s.label));
  return out;
}

}  // namespace

std::string profile_from_source(const std::string& source_id) {
  std::string stem = fs::path(source_id).stem().string();
  std::size_t us = stem.find_last_of('_');
  if (us == std::string::npos || us + 1 >= stem.size()) return "unknown";
  return stem.substr(us + 1);
}

EvalReport evaluate(const Model<float>& model, const Charset& charset,
                    const std::vector<RawSample>& samples, const EvalOptions& options) {
  runtime_init();
  if (samples.empty()) throw InputError("evaluate: no samples");

  int threads = options.threads > 0 ? options.threads : worker_threads();
  threads = std::max(1, std::min<int>(threads, int(samples.size())));

  // Contiguous chunks, merged in index order: the report never depends on
  // the worker count.
  std::vector<SampleResult> results(samples.size());
  auto run_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      results[i] = score_sample(model, charset, samples[i], options.resize);
  };
  if (threads == 1) {
    run_range(0, samples.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t per = (samples.size() + std::size_t(threads) - 1) / std::size_t(threads);
    for (int t = 0; t < threads; ++t) {
      const std::size_t lo = std::size_t(t) * per;
      const std::size_t hi = std::min(samples.size(), lo + per);
      if (lo >= hi) break;
      pool.emplace_back(run_range, lo, hi);
    }
    for (std::thread& th : pool) th.join();
  }

  EvalReport report;
  report.overall.name = "all";
  std::map<std::string, GroupStat> buckets, profiles;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const RawSample& s = samples[i];
    const bool ok = results[i].correct;
    ++report.overall.count;
    report.overall.correct += ok;
    GroupStat& b = buckets[bucket_name(compute_bucket(s.image.h, s.image.w).id)];
    ++b.count;
    b.correct += ok;
    GroupStat& p = profiles[profile_from_source(s.source_id)];
    ++p.count;
    p.correct += ok;
    if (options.keep_predictions) report.predictions.push_back(results[i].prediction);
  }
  for (auto& [name, stat] : buckets) {
    stat.name = name;
    report.by_bucket.push_back(stat);
  }
  for (auto& [name, stat] : profiles) {
    stat.name = name;
    report.by_profile.push_back(stat);
  }
  return report;
}

EvalReport evaluate_checkpoint(const std::string& checkpoint_path,
                               const std::string& manifest_path, const EvalOptions& options) {
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
  const std::string charset_path =
      (fs::path(manifest_path).parent_path() / "charset.txt").string();
  Charset data_charset = Charset::load(charset_path);
  if (data_charset.hash() != ckpt.charset.hash())
    throw ConfigError(str_cat("evaluate: dataset charset ", charset_path,
                              " does not match the checkpoint's"));
  std::vector<RawSample> samples = load_manifest(manifest_path, ckpt.charset);
  return evaluate(ckpt.model, ckpt.charset, samples, options);
}

void write_eval_csv(const EvalReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError(str_cat("evaluate: cannot open ", path));
  f << "group,name,count,correct,accuracy\n";
  auto row = [&](const char* group, const GroupStat& s) {
    f << group << "," << s.name << "," << s.count << "," << s.correct << "," << s.accuracy()
      << "\n";
  };
  row("overall", report.overall);
  for (const GroupStat& s : report.by_bucket) row("bucket", s);
  for (const GroupStat& s : report.by_profile) row("profile", s);
}

}  // namespace svtr2
