#include "svtr2/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "svtr2/checkpoint.hpp"
#include "svtr2/common.hpp"
#include "svtr2/ctc.hpp"
#include "svtr2/eval.hpp"
#include "svtr2/image.hpp"
#include "svtr2/ops.hpp"
#include "svtr2/optim.hpp"
#include "svtr2/schedule.hpp"
#include "svtr2/synth.hpp"

namespace fs = std::filesystem;

namespace svtr2 {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double to_f64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(str_cat("config: ", key, "=", v, " is not a number"));
  }
}

long long to_ll(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(str_cat("config: ", key, "=", v, " is not an integer"));
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(str_cat("config: ", key, "=", v, " is not an unsigned integer"));
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(str_cat("config: ", key, "=", v, " is not a boolean"));
}

void apply_kv(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "variant") cfg.variant = parse_variant(value);
  else if (key == "frm_mode") cfg.frm_mode = parse_frm_mode(value);
  else if (key == "lr") cfg.lr = to_f64(key, value);
  else if (key == "weight_decay") cfg.weight_decay = to_f64(key, value);
  else if (key == "warmup_epochs") cfg.warmup_epochs = to_f64(key, value);
  else if (key == "total_epochs") cfg.total_epochs = int(to_ll(key, value));
  else if (key == "batch_size") cfg.batch_size = int(to_ll(key, value));
  else if (key == "lambda1") cfg.lambda1 = to_f64(key, value);
  else if (key == "lambda2") cfg.lambda2 = to_f64(key, value);
  else if (key == "phases") cfg.phases = value;
  else if (key == "seed") cfg.seed = to_u64(key, value);
  else if (key == "resize") cfg.resize = parse_resize_mode(value);
  else if (key == "sgm_window") cfg.sgm_window = int(to_ll(key, value));
  else if (key == "val_fraction") cfg.val_fraction = to_f64(key, value);
  else if (key == "clip_norm") cfg.clip_norm = to_f64(key, value);
  else if (key == "max_label_len") cfg.max_label_len = int(to_ll(key, value));
  else if (key == "augment") cfg.augment = to_bool(key, value);
  else if (key == "data") cfg.data = value;
  else if (key == "charset") cfg.charset = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "init_checkpoint") cfg.init_checkpoint = value;
  else throw ConfigError(str_cat("config: unknown key '", key, "'"));
}

}  // namespace

void apply_override(TrainConfig& cfg, const std::string& keyval) {
  std::size_t eq = keyval.find('=');
  if (eq == std::string::npos)
    throw ConfigError(str_cat("config: expected key=value, got '", keyval, "'"));
  apply_kv(cfg, trim(keyval.substr(0, eq)), trim(keyval.substr(eq + 1)));
}

TrainConfig parse_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError(str_cat("config: cannot open ", path));
  TrainConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(str_cat("config ", path, ":", lineno, ": expected key=value"));
    try {
      apply_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(str_cat(path, ":", lineno, ": ", e.what()));
    }
  }
  validate(cfg);
  return cfg;
}

void validate(const TrainConfig& cfg) {
  if (cfg.lambda1 < 0 || cfg.lambda2 < 0)
    throw ConfigError("config: loss weights must be nonnegative");
  if (cfg.total_epochs < 1)
    throw ConfigError(str_cat("config: total_epochs of ", cfg.total_epochs));
  if (cfg.warmup_epochs < 0 || cfg.warmup_epochs >= double(cfg.total_epochs))
    throw ConfigError(str_cat("config: warmup of ", cfg.warmup_epochs,
                              " epochs must be < total of ", cfg.total_epochs));
  if (cfg.batch_size < 1) throw ConfigError(str_cat("config: batch_size of ", cfg.batch_size));
  if (cfg.phases != "A" && cfg.phases != "B" && cfg.phases != "AB")
    throw ConfigError(str_cat("config: phases must be A, B, or AB, got '", cfg.phases, "'"));
  if (cfg.val_fraction < 0 || cfg.val_fraction >= 1)
    throw ConfigError(str_cat("config: val_fraction of ", cfg.val_fraction));
  if (cfg.sgm_window < 1) throw ConfigError(str_cat("config: sgm_window of ", cfg.sgm_window));
  if (cfg.clip_norm <= 0) throw ConfigError(str_cat("config: clip_norm of ", cfg.clip_norm));
  if (cfg.max_label_len < 1)
    throw ConfigError(str_cat("config: max_label_len of ", cfg.max_label_len));
  if (cfg.lr < 0) throw ConfigError("config: negative learning rate");
  if (cfg.weight_decay < 0) throw ConfigError("config: negative weight decay");
}

namespace {

Tensor<float> sample_image(const RawSample& s, int h, int w) {
  Image r3 = with_channels(resize_bilinear(s.image, h, w), 3);
  std::vector<float> data(r3.data.begin(), r3.data.end());
  return Tensor<float>::from({3, h, w}, std::move(data));
}

Tensor<float> mean_of(const std::vector<Tensor<float>>& terms) {
  Tensor<float> acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return scale(acc, 1.0 / double(terms.size()));
}

}  // namespace

LossBreakdown total_loss(const Model<float>& model, const std::vector<RawSample>& samples,
                         const Batch& batch, bool with_sgm, double lambda1, double lambda2) {
  if (with_sgm && !model.has_sgm())
    throw StateError("total_loss: context term requested but the branch is absent");
  LossBreakdown out;
  std::vector<Tensor<float>> ctc_terms, sgm_terms;
  for (int idx : batch.sample_indices) {
    const RawSample& s = samples[std::size_t(idx)];
    ModelOutput<float> y = model.forward(sample_image(s, batch.height, batch.width));
    if (ctc_min_frames(s.label) > y.logits.dim(0)) {
      ++out.skipped_infeasible;
      continue;
    }
    ctc_terms.push_back(ctc_loss(y.logits, s.label));
    if (with_sgm) sgm_terms.push_back(model.sgm_loss(y.features, s.label));
    ++out.used;
  }
  if (out.used == 0) {
    out.total = Tensor<float>::scalar(0.0f);
    return out;
  }
  Tensor<float> ctc_mean = mean_of(ctc_terms);
  out.ctc = double(ctc_mean.at({0}));
  out.total = scale(ctc_mean, lambda1);
  if (with_sgm) {
    Tensor<float> sgm_mean = mean_of(sgm_terms);
    out.sgm = double(sgm_mean.at({0}));
    out.total = add(out.total, scale(sgm_mean, lambda2));
  }
  return out;
}

namespace {

// Diagnostic dump for a batch whose loss went non-finite: the exact resized
// inputs plus their labels, so the failure can be replayed.
std::string dump_batch(const TrainConfig& cfg, long long step,
                       const std::vector<RawSample>& samples, const Batch& batch,
                       const Charset& charset) {
  fs::path dir = fs::path(cfg.out_dir) / str_cat("nan_batch_", step);
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream labels((dir / "labels.txt").string());
  for (std::size_t i = 0; i < batch.sample_indices.size(); ++i) {
    const RawSample& s = samples[std::size_t(batch.sample_indices[i])];
    char name[32];
    std::snprintf(name, sizeof name, "%03d.pgm", int(i));
    try {
      write_pgm((dir / name).string(), resize_bilinear(s.image, batch.height, batch.width));
    } catch (const IoError&) {
      // Best effort; the labels file still records the sample.
    }
    labels << name << "\t" << s.source_id << "\t" << charset.decode(s.label) << "\n";
  }
  return dir.string();
}

struct StepLog {
  std::ofstream csv;
  explicit StepLog(const std::string& path) : csv(path) {
    if (!csv) throw IoError(str_cat("train: cannot open log ", path));
    csv << "step,epoch,lr,loss,ctc,sgm,grad_norm,clipped,used,skipped\n";
  }
};

}  // namespace

TrainReport train(const TrainConfig& cfg) {
  runtime_init();
  validate(cfg);
  if (cfg.data.empty()) throw ConfigError("train: no data manifest configured");

  const std::string charset_path =
      cfg.charset.empty() ? (fs::path(cfg.data).parent_path() / "charset.txt").string()
                          : cfg.charset;
  Charset charset = Charset::load(charset_path);
  std::vector<RawSample> all = load_manifest(cfg.data, charset);
  if (all.empty()) throw InputError(str_cat("train: empty manifest ", cfg.data));

  TrainReport report;
  std::vector<RawSample> tr, val;
  for (RawSample& s : all) {
    if (int(s.label.size()) > cfg.max_label_len) {
      ++report.dropped_long_labels;
      continue;
    }
    const std::uint64_t h =
        hash_words({cfg.seed, fnv1a64(s.source_id.data(), s.source_id.size())});
    if (double(h % 10000) < cfg.val_fraction * 10000.0)
      val.push_back(std::move(s));
    else
      tr.push_back(std::move(s));
  }
  if (report.dropped_long_labels > 0)
    std::fprintf(stderr, "train: dropped %lld samples with labels over %d characters\n",
                 report.dropped_long_labels, cfg.max_label_len);
  if (tr.empty()) throw InputError("train: no training samples after the validation split");
  report.train_samples = int(tr.size());
  report.val_samples = int(val.size());

  fs::create_directories(cfg.out_dir);

  // Starting point: fresh recognizer, or a phase-A checkpoint when only
  // phase B is requested.
  ModelConfig mc;
  mc.variant = cfg.variant;
  mc.charset_size = charset.size();
  mc.frm_mode = cfg.frm_mode;
  mc.with_sgm = false;
  mc.sgm_window = cfg.sgm_window;
  Model<float> model(mc, cfg.seed);
  if (cfg.phases == "B") {
    if (cfg.init_checkpoint.empty())
      throw ConfigError("train: phases=B needs init_checkpoint=<phase-A checkpoint>");
    LoadedCheckpoint ckpt = load_checkpoint(cfg.init_checkpoint);
    if (ckpt.charset.hash() != charset.hash())
      throw ConfigError(str_cat("train: checkpoint charset does not match ", charset_path));
    if (ckpt.model.has_sgm())
      throw ConfigError("train: init checkpoint already carries a context branch");
    if (ckpt.model.config().variant != cfg.variant)
      throw ConfigError("train: checkpoint variant differs from the configured variant");
    model = std::move(ckpt.model);
  }

  const AugmentConfig aug_cfg;
  long long global_step = 0;
  std::string last_ckpt;

  for (char phase : cfg.phases) {
    const bool is_b = phase == 'B';
    const std::string tag = is_b ? "b" : "a";
    if (is_b) model.add_sgm(hash_words({cfg.seed, 0xB00Full}));

    // Re-warmed schedule and a fresh optimizer per phase. The batch count
    // per epoch is fixed (shuffling never changes group sizes).
    const long long steps_per_epoch = (long long)
        build_batches(tr, cfg.batch_size, hash_words({cfg.seed, std::uint64_t(phase), 0}),
                      cfg.resize)
            .batches.size();
    const long long total_steps = steps_per_epoch * cfg.total_epochs;
    const long long warmup_steps =
        std::min(std::llround(cfg.warmup_epochs * double(steps_per_epoch)), total_steps - 1);
    OneCycle sched(total_steps, warmup_steps, OneCycle::scaled_peak(cfg.lr, cfg.batch_size));

    AdamWHyper hyper;
    hyper.lr = 0.0;
    hyper.weight_decay = cfg.weight_decay;
    AdamW<float> opt(model.params(), hyper);

    StepLog log((fs::path(cfg.out_dir) / str_cat("train_log_", tag, ".csv")).string());
    std::ofstream val_log((fs::path(cfg.out_dir) / str_cat("val_log_", tag, ".csv")).string());
    val_log << "epoch,step,val_accuracy\n";

    PhaseResult pr;
    pr.name = is_b ? "B" : "A";

    for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
      BatchManifest bm = build_batches(
          tr, cfg.batch_size,
          hash_words({cfg.seed, std::uint64_t(phase), std::uint64_t(epoch)}), cfg.resize);
      for (const Batch& batch : bm.batches) {
        // Optional augmentation works on copies; the originals stay pristine
        // for validation and later epochs.
        const std::vector<RawSample>* src = &tr;
        Batch local = batch;
        std::vector<RawSample> augmented;
        if (cfg.augment) {
          augmented.reserve(batch.sample_indices.size());
          local.sample_indices.clear();
          for (int idx : batch.sample_indices) {
            augmented.push_back(augment(
                tr[std::size_t(idx)], aug_cfg,
                hash_words({cfg.seed, std::uint64_t(global_step), std::uint64_t(idx)})));
            local.sample_indices.push_back(int(augmented.size()) - 1);
          }
          src = &augmented;
        }

        Tape<float> tape;
        LossBreakdown lb;
        double loss_value = 0.0;
        {
          Tape<float>::Scope scope(tape);
          try {
            lb = total_loss(model, *src, local, is_b, cfg.lambda1, cfg.lambda2);
            loss_value = double(lb.total.at({0}));
          } catch (const StateError& e) {
            std::string dir = dump_batch(cfg, pr.steps, *src, local, charset);
            throw StateError(str_cat("train: aborted at step ", pr.steps, " (", e.what(),
                                     "); batch dumped to ", dir));
          }
          if (!std::isfinite(loss_value)) {
            std::string dir = dump_batch(cfg, pr.steps, *src, local, charset);
            throw StateError(str_cat("train: non-finite loss at step ", pr.steps,
                                     "; batch dumped to ", dir));
          }
          if (lb.used > 0) tape.backward(lb.total);
        }
        pr.skipped_infeasible += lb.skipped_infeasible;

        const double gnorm = opt.clip_grad_norm(cfg.clip_norm);
        const bool clipped = gnorm > cfg.clip_norm;
        if (clipped) {
          ++pr.clipped_steps;
          std::fprintf(stderr, "train[%s] step %lld: gradient norm %.3f clipped to %.1f\n",
                       pr.name.c_str(), pr.steps, gnorm, cfg.clip_norm);
        }
        opt.set_lr(sched.at(pr.steps));
        opt.step();
        opt.zero_grad();

        log.csv << pr.steps << "," << epoch << "," << opt.lr() << "," << loss_value << ","
                << lb.ctc << "," << lb.sgm << "," << gnorm << "," << (clipped ? 1 : 0) << ","
                << lb.used << "," << lb.skipped_infeasible << "\n";
        ++pr.steps;
        ++global_step;
      }

      double acc = 0.0;
      if (!val.empty()) {
        EvalOptions eo;
        eo.resize = cfg.resize;
        acc = evaluate(model, charset, val, eo).overall.accuracy();
      }
      pr.final_val_accuracy = acc;
      val_log << epoch << "," << pr.steps << "," << acc << "\n";
      val_log.flush();
      log.csv.flush();
    }

    pr.checkpoint = (fs::path(cfg.out_dir) / str_cat("phase_", tag, ".ckpt")).string();
    save_checkpoint(pr.checkpoint, model, charset, pr.name, global_step);
    last_ckpt = pr.checkpoint;
    report.phases.push_back(std::move(pr));
  }

  report.inference_checkpoint = (fs::path(cfg.out_dir) / "inference.ckpt").string();
  strip_for_inference(last_ckpt, report.inference_checkpoint);
  return report;
}

}  // namespace svtr2
