// Command-line front end: data synthesis, training, evaluation, latency
// benchmarking, gradient verification, and single-image decoding.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "svtr2/bench.hpp"
#include "svtr2/checkpoint.hpp"
#include "svtr2/common.hpp"
#include "svtr2/ctc.hpp"
#include "svtr2/eval.hpp"
#include "svtr2/gradcheck.hpp"
#include "svtr2/image.hpp"
#include "svtr2/model.hpp"
#include "svtr2/msr.hpp"
#include "svtr2/ops.hpp"
#include "svtr2/synth.hpp"
#include "svtr2/train.hpp"

namespace {

using namespace svtr2;

Tensor<float> prepare_image(const Image& raw, ResizeMode mode) {
  AspectBucket target = target_for(mode, raw.h, raw.w);
  Image sized = resize_bilinear(with_channels(raw, 3), target.height, target.width);
  Tensor<float> x = Tensor<float>::zeros({3, target.height, target.width});
  x.values().assign(sized.data.begin(), sized.data.end());
  return x;
}

// Geometric mean of the per-frame winning-class probabilities.
double decode_confidence(const Tensor<float>& logits) {
  Tensor<float> probs = softmax(logits, -1);
  const int frames = probs.shape()[0];
  const int classes = probs.shape()[1];
  if (frames == 0) return 0.0;
  double log_acc = 0.0;
  for (int t = 0; t < frames; ++t) {
    float best = probs.at({t, 0});
    for (int c = 1; c < classes; ++c) best = std::max(best, probs.at({t, c}));
    log_acc += std::log(std::max(double(best), 1e-30));
  }
  return std::exp(log_acc / frames);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(str_cat("cannot write ", path));
  return out;
}

void dump_rearrangement(const std::string& path, const FrmDiag<float>& diag, int h, int w) {
  Tensor<float> eff = effective_rearrangement(diag, h, w);
  std::ofstream out = open_out(path);
  out << "matrix,row,values...\n";
  for (std::size_t i = 0; i < diag.mh.size(); ++i) {
    const Tensor<float>& m = diag.mh[i];
    for (int r = 0; r < m.shape()[0]; ++r) {
      out << "mh" << i << "," << r;
      for (int c = 0; c < m.shape()[1]; ++c) out << "," << m.at({r, int(c)});
      out << "\n";
    }
  }
  for (int r = 0; r < diag.mv.shape()[0]; ++r) {
    out << "mv," << r;
    for (int c = 0; c < diag.mv.shape()[1]; ++c) out << "," << diag.mv.at({r, c});
    out << "\n";
  }
  for (int r = 0; r < eff.shape()[0]; ++r) {
    out << "effective," << r;
    for (int c = 0; c < eff.shape()[1]; ++c) out << "," << eff.at({r, c});
    out << "\n";
  }
  if (!out) throw IoError(str_cat("short write: ", path));
}

void dump_context_attention(const std::string& path, const Model<float>& model,
                            const FeatureMap<float>& features, const std::vector<int>& label,
                            const Charset& charset) {
  if (!model.has_sgm())
    throw StateError("attention dump needs a checkpoint with the context branch (phase B)");
  if (label.empty()) throw StateError("nothing was decoded, so there is no attention to dump");
  auto rows = model.sgm_attention(features, label);
  std::ofstream out = open_out(path);
  out << "position,character,side,grid " << features.h << "x" << features.w << "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const char* side[2] = {"left", "right"};
    const Tensor<float>* att[2] = {&rows[i].first, &rows[i].second};
    for (int s = 0; s < 2; ++s) {
      out << i << "," << charset.at(label[i]) << "," << side[s];
      for (int c = 0; c < att[s]->shape()[1]; ++c) out << "," << att[s]->at({0, c});
      out << "\n";
    }
  }
  if (!out) throw IoError(str_cat("short write: ", path));
}

void print_eval_report(const EvalReport& rep) {
  std::printf("overall: %lld/%lld = %.4f\n", rep.overall.correct, rep.overall.count,
              rep.overall.accuracy());
  for (const GroupStat& g : rep.by_bucket)
    std::printf("bucket %s: %lld/%lld = %.4f\n", g.name.c_str(), g.correct, g.count,
                g.accuracy());
  for (const GroupStat& g : rep.by_profile)
    std::printf("profile %s: %lld/%lld = %.4f\n", g.name.c_str(), g.correct, g.count,
                g.accuracy());
}

}  // namespace

int main(int argc, char** argv) {
  runtime_init();

  CLI::App app{"svtr2: scene-text recognition — synthesis, training, evaluation, decoding"};
  app.require_subcommand(1);
  int exit_code = 0;

  // --- synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic dataset");
  std::string sy_profile = "regular", sy_out, sy_alphabet = kDefaultAlphabet;
  int sy_n = 0;
  std::uint64_t sy_seed = 0;
  synth->add_option("--profile", sy_profile,
                    "regular|rotated|curved|occluded|long|mixed");
  synth->add_option("--n", sy_n, "number of samples")->required();
  synth->add_option("--seed", sy_seed, "generator seed");
  synth->add_option("--out", sy_out, "output directory")->required();
  synth->add_option("--alphabet", sy_alphabet, "character set to draw words from");
  synth->callback([&] {
    make_dataset(parse_profile(sy_profile), sy_n, sy_seed, sy_out, sy_alphabet);
    std::printf("wrote %d %s samples to %s\n", sy_n, sy_profile.c_str(), sy_out.c_str());
  });

  // --- train ---------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Run the two-phase training loop");
  std::string tr_config, tr_model, tr_resize;
  std::vector<std::string> tr_sets;
  int tr_batch = 0;
  std::int64_t tr_seed = -1;
  tr->add_option("--config", tr_config, "key=value config file")->required();
  tr->add_option("--set", tr_sets, "override, e.g. --set lr=0.001 (repeatable)");
  tr->add_option("--model", tr_model, "variant override: nano|tiny|small|base");
  tr->add_option("--resize", tr_resize, "resize override: msr|fixed32x128|fixed64x256");
  tr->add_option("--batch-size", tr_batch, "batch size override");
  tr->add_option("--seed", tr_seed, "seed override");
  tr->callback([&] {
    TrainConfig cfg = parse_train_config(tr_config);
    for (const std::string& kv : tr_sets) apply_override(cfg, kv);
    if (!tr_model.empty()) apply_override(cfg, "variant=" + tr_model);
    if (!tr_resize.empty()) apply_override(cfg, "resize=" + tr_resize);
    if (tr_batch > 0) apply_override(cfg, str_cat("batch_size=", tr_batch));
    if (tr_seed >= 0) apply_override(cfg, str_cat("seed=", tr_seed));
    TrainReport rep = train(cfg);
    for (const PhaseResult& p : rep.phases)
      std::printf("phase %s: %lld steps, val accuracy %.4f, wrote %s\n", p.name.c_str(),
                  p.steps, p.final_val_accuracy, p.checkpoint.c_str());
    if (rep.dropped_long_labels > 0)
      std::printf("dropped %lld samples with labels over the cap\n", rep.dropped_long_labels);
    std::printf("inference checkpoint: %s\n", rep.inference_checkpoint.c_str());
  });

  // --- eval ----------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Word accuracy of a checkpoint over a dataset");
  std::string ev_ckpt, ev_data, ev_csv, ev_resize = "msr";
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--data", ev_data, "manifest.tsv path")->required();
  ev->add_option("--csv", ev_csv, "also write the report as CSV");
  ev->add_option("--resize", ev_resize, "msr|fixed32x128|fixed64x256");
  ev->callback([&] {
    EvalOptions opt;
    opt.resize = parse_resize_mode(ev_resize);
    EvalReport rep = evaluate_checkpoint(ev_ckpt, ev_data, opt);
    print_eval_report(rep);
    if (!ev_csv.empty()) write_eval_csv(rep, ev_csv);
  });

  // --- bench ---------------------------------------------------------------
  auto* be = app.add_subcommand("bench", "Length-normalized single-image latency");
  std::string be_ckpt, be_data, be_csv, be_resize = "msr";
  be->add_option("--ckpt", be_ckpt, "checkpoint path")->required();
  be->add_option("--data", be_data, "manifest.tsv path")->required();
  be->add_option("--csv", be_csv, "also write the report as CSV");
  be->add_option("--resize", be_resize, "msr|fixed32x128|fixed64x256");
  be->callback([&] {
    LoadedCheckpoint ck = load_checkpoint(be_ckpt);
    std::vector<RawSample> samples = load_manifest(be_data, ck.charset);
    auto now = [] {
      return std::chrono::duration<double>(
                 std::chrono::steady_clock::now().time_since_epoch())
          .count();
    };
    BenchReport rep = bench_inference(ck.model, samples, parse_resize_mode(be_resize), now);
    for (const auto& pl : rep.per_length)
      std::printf("length %d: %lld samples, %.6f s avg\n", pl.length, pl.count, pl.avg_time);
    std::printf("mean over lengths: %.6f s -> %.1f samples/s\n", rep.mean_time, rep.fps);
    if (!be_csv.empty()) write_bench_csv(rep, be_csv);
  });

  // --- gradcheck -----------------------------------------------------------
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference verification of every op");
  gc->callback([&] {
    std::vector<GradCheckReport> reports = run_gradcheck_suite();
    int failed = 0;
    for (const GradCheckReport& r : reports) {
      std::printf("%s %-28s max_rel %.3e (tol %.0e, %d checked)\n",
                  r.pass ? "PASS" : "FAIL", r.name.c_str(), r.max_rel_err, r.tolerance,
                  r.checked);
      if (!r.pass) {
        ++failed;
        std::printf("     worst: %s\n", r.worst.c_str());
      }
    }
    std::printf("%zu checks, %d failed\n", reports.size(), failed);
    if (failed > 0) exit_code = 1;
  });

  // --- decode --------------------------------------------------------------
  auto* de = app.add_subcommand("decode", "Read one image and print text + confidence");
  std::string de_ckpt, de_image, de_resize = "msr", de_dump_rearrange, de_dump_attn;
  de->add_option("--ckpt", de_ckpt, "checkpoint path")->required();
  de->add_option("--image", de_image, "PGM/PPM image path")->required();
  de->add_option("--resize", de_resize, "msr|fixed32x128|fixed64x256");
  de->add_option("--dump-rearrangement", de_dump_rearrange,
                 "write the head's mixing matrices as CSV");
  de->add_option("--dump-sgm-attn", de_dump_attn,
                 "write per-character context attention rows as CSV");
  de->callback([&] {
    LoadedCheckpoint ck = load_checkpoint(de_ckpt);
    Image raw = read_pnm(de_image);
    Tensor<float> x = prepare_image(raw, parse_resize_mode(de_resize));
    FrmDiag<float> diag;
    ModelOutput<float> out = ck.model.forward(x, &diag);
    DecodedText dec = greedy_decode(out.logits);
    std::printf("%s\t%.6f\n", ck.charset.decode(dec.indices).c_str(),
                decode_confidence(out.logits));
    if (!de_dump_rearrange.empty())
      dump_rearrangement(de_dump_rearrange, diag, out.features.h, out.features.w);
    if (!de_dump_attn.empty())
      dump_context_attention(de_dump_attn, ck.model, out.features, dec.indices, ck.charset);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return exit_code;
}
