#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "svtr2/ops.hpp"
#include "svtr2/tensor.hpp"

// Recognition model: a three-stage convolution/attention backbone producing a
// (H/8, W/4) token grid, a rearrangement head that turns the grid into a
// width-ordered sequence for the alignment loss, and an optional training-only
// context branch that classifies characters from their neighbor strings.

namespace svtr2 {

// Attention logits are scaled by 1/sqrt(d_head) unless the build opts out
// (SVTR2_ATTN_NO_SCALE) to follow the bare dot-product formulation.
inline double attn_scale(int d_head) {
#ifdef SVTR2_ATTN_NO_SCALE
  (void)d_head;
  return 1.0;
#else
  return 1.0 / std::sqrt(double(d_head));
#endif
}

// ---------------------------------------------------------------------------
// Named parameter registry. Every learnable tensor is created through one of
// these helpers so the optimizer and checkpoint writer see a stable, named,
// ordered inventory. Initialization draws from an RNG keyed by (seed, name),
// making each parameter's initial values independent of registration order.
// ---------------------------------------------------------------------------

template <class S>
struct ParamEntry {
  std::string name;
  Tensor<S> tensor;
  bool no_decay = false;  // normalization gains/biases and bias vectors
};

template <class S>
class ParamRegistry {
 public:
  explicit ParamRegistry(std::uint64_t seed) : seed_(seed) {}

  // Dense weight, normal(0, std).
  Tensor<S> weight(const std::string& name, std::vector<int> shape, double stddev);
  // Convolution kernel [cout, cin/groups, kh, kw], He-style std over fan-in.
  Tensor<S> conv_weight(const std::string& name, std::vector<int> shape);
  // Zero-filled bias-like parameter (weight decay exempt).
  Tensor<S> bias(const std::string& name, int n);
  // Normalization gain (ones) / bias (zeros), both weight decay exempt.
  Tensor<S> norm_gain(const std::string& name, int n);
  Tensor<S> norm_bias(const std::string& name, int n);
  // Learned 1 x dim token, normal(0, 0.02).
  Tensor<S> token(const std::string& name, int dim);

  std::vector<ParamEntry<S>>& entries() { return entries_; }
  const std::vector<ParamEntry<S>>& entries() const { return entries_; }
  const Tensor<S>* find(const std::string& name) const;
  // Drops every entry whose name starts with `prefix`; returns the count.
  int remove_prefix(const std::string& prefix);
  std::uint64_t seed() const { return seed_; }
  void reseed(std::uint64_t seed) { seed_ = seed; }

  long long total_elements() const;

 private:
  Tensor<S> add(const std::string& name, std::vector<int> shape, double stddev, bool no_decay,
                double constant, bool use_constant);

  std::uint64_t seed_ = 0;
  std::vector<ParamEntry<S>> entries_;
};

// ---------------------------------------------------------------------------
// Parameter bundles for the building blocks, holding registry handles.
// ---------------------------------------------------------------------------

template <class S>
struct LinearP {
  Tensor<S> w;  // [in, out]
  Tensor<S> b;  // [out], may be undefined for bias-free projections
};

template <class S>
struct LayerNormP {
  Tensor<S> g, b;  // [dim]
};

template <class S>
struct ConvP {
  Tensor<S> w;  // [cout, cin/groups, kh, kw]
  Tensor<S> b;  // [cout]
  int groups = 1, sh = 1, sw = 1, ph = 1, pw = 1;
};

template <class S>
struct MlpP {
  LinearP<S> fc1, fc2;  // expand by the MLP ratio, GELU between
};

template <class S>
struct AttnP {
  LinearP<S> q, k, v, o;  // all [d, d] with biases
  int heads = 1;
};

template <class S>
struct LocalBlockP {
  LayerNormP<S> n1;
  ConvP<S> c1, c2;  // back-to-back 3x3 grouped convs, nothing between them
  LayerNormP<S> n2;
  MlpP<S> mlp;
};

template <class S>
struct GlobalBlockP {
  LayerNormP<S> n1;
  AttnP<S> att;
  LayerNormP<S> n2;
  MlpP<S> mlp;
};

template <class S>
struct StemP {
  ConvP<S> c1, c2;  // 3 -> D0/2 -> D0, both stride 2
  LayerNormP<S> n1, n2;
};

// Rearrangement head. The horizontal step follows its defining formula
// literally: multi-head attention with q/k/v projections only (no output
// projection), residual+norm AFTER the add, then an MLP sub-block. The
// vertical step is a single learned token selecting over rows, value-projected
// with no residual or MLP. `cls` maps each frame to charset+blank logits.
template <class S>
struct FrmP {
  int heads = 1;
  Tensor<S> hq, hk, hv;     // [D2, D2], bias-free
  LayerNormP<S> n1, n2;
  MlpP<S> mlp;
  Tensor<S> vt;             // [1, D2] selecting token
  Tensor<S> vk, vv;         // [D2, D2], bias-free
  GlobalBlockP<S> tf;       // only populated in the one-block ablation mode
  LinearP<S> cls;           // [D2, charset+1], bias-free
};

// Context branch: one shared embedding table (charset plus one padding row),
// per-side context token + two attention stages, one shared classifier.
template <class S>
struct SgmSideP {
  Tensor<S> token;                // [1, D2]
  Tensor<S> cq, ck, cv;           // context attention, [D2, D2]
  LayerNormP<S> norm;             // after the residual add onto the token
  Tensor<S> vq, vk, vv;           // visual attention, [D2, D2]
};

template <class S>
struct SgmP {
  int window = 5;                 // context characters per side
  Tensor<S> embed;                // [charset+1, D2]; last row is the pad slot
  SgmSideP<S> left, right;
  Tensor<S> cls;                  // [D2, charset], bias-free, shared by sides
};

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

enum class Variant { nano, tiny, small, base };

Variant parse_variant(const std::string& name);  // ConfigError on unknown
std::string variant_name(Variant v);

enum class BlockKind { local, global };

struct BackboneConfig {
  std::array<int, 3> dims{};    // D0, D1, D2
  std::array<int, 3> depths{};  // blocks per stage
  std::array<int, 3> heads{};   // attention heads per stage
  std::vector<BlockKind> permutation;  // length = sum(depths), spans stages
  int mlp_ratio = 4;
};

// Per-variant table; head counts follow dim/32 with a floor of one head.
BackboneConfig make_config(Variant v);

enum class FrmMode { frm, pool, tf1 };

FrmMode parse_frm_mode(const std::string& name);  // ConfigError on unknown
std::string frm_mode_name(FrmMode m);

struct ModelConfig {
  Variant variant = Variant::nano;
  int charset_size = 0;       // classes excluding the blank
  FrmMode frm_mode = FrmMode::frm;
  bool with_sgm = false;
  int sgm_window = 5;
};

// ---------------------------------------------------------------------------
// Feature map: tokens in row-major grid order, row i occupying rows
// [i*w, (i+1)*w) of the tensor.
// ---------------------------------------------------------------------------

template <class S>
struct FeatureMap {
  Tensor<S> tokens;  // [h*w, D2]
  int h = 0, w = 0;
};

// Layout bridges between token matrices and channel-planar images.
template <class S> Tensor<S> tokens_to_plane(const Tensor<S>& x, int h, int w);
template <class S> Tensor<S> plane_to_tokens(const Tensor<S>& x);

// ---------------------------------------------------------------------------
// Building-block forwards (free functions so tests and gradient checks can
// drive each one in isolation).
// ---------------------------------------------------------------------------

template <class S> Tensor<S> linear(const LinearP<S>& p, const Tensor<S>& x);
template <class S> Tensor<S> mlp_forward(const MlpP<S>& p, const Tensor<S>& x);

// Full self-attention over all rows of x ([n, d]); pre-norm residual callers.
template <class S> Tensor<S> mhsa_forward(const AttnP<S>& p, const Tensor<S>& x);

// Cross-attention: queries from q ([nq, d]), keys/values from kv ([nk, d]).
template <class S>
Tensor<S> cross_attention(const AttnP<S>& p, const Tensor<S>& q, const Tensor<S>& kv);

template <class S>
Tensor<S> local_mixing(const LocalBlockP<S>& p, const Tensor<S>& x, int h, int w);
template <class S> Tensor<S> global_mixing(const GlobalBlockP<S>& p, const Tensor<S>& x);

// Two stride-2 convolutions with norm+GELU after each; image [3, H, W] must
// have H, W divisible by 4. Returns tokens on the (H/4, W/4) grid.
template <class S>
FeatureMap<S> stem_embed(const StemP<S>& p, const Tensor<S>& image);

// 3x3 stride-(2,1) convolution halving the grid height (ShapeError when odd).
template <class S>
FeatureMap<S> merge_height(const ConvP<S>& p, const FeatureMap<S>& x);

// Optional capture of the rearrangement attention for diagnostics: mh[i] is
// row i's head-averaged [w, w] matrix, mv is [w, h] (one row per output
// frame). Detached values, not part of the autodiff graph.
template <class S>
struct FrmDiag {
  std::vector<Tensor<S>> mh;
  Tensor<S> mv;
};

template <class S>
FeatureMap<S> horizontal_rearrange(const FrmP<S>& p, const FeatureMap<S>& f,
                                   FrmDiag<S>* diag = nullptr);
template <class S>
Tensor<S> vertical_rearrange(const FrmP<S>& p, const FeatureMap<S>& fh,
                             FrmDiag<S>* diag = nullptr);
template <class S> Tensor<S> ctc_logits(const FrmP<S>& p, const Tensor<S>& seq);

// Composition of the captured attention into one soft permutation matrix
// [w, h*w]: entry (m, i*w+j) = mv[m][i] * mh[i][m][j]. Rows sum to 1.
template <class S>
Tensor<S> effective_rearrangement(const FrmDiag<S>& diag, int h, int w);

// Column-mean pooling over the grid height: [h*w, d] -> [w, d].
template <class S> Tensor<S> column_mean(const FeatureMap<S>& f);

// ---------------------------------------------------------------------------
// Context branch pieces.
// ---------------------------------------------------------------------------

// Per-position context windows over a label; out-of-range slots hold the pad
// index (= charset size). left[i] lists the window positions i-ls..i-1 in
// order; right[i] lists i+1..i+ls.
struct ContextWindows {
  std::vector<std::vector<int>> left, right;
};
ContextWindows extract_windows(const std::vector<int>& label, int window, int pad_index);

// Encodes one window (list of embedding rows) into a [1, D2] summary: the
// side token cross-attends over the window embeddings, residual-adds onto
// itself, then layer-norms.
template <class S>
Tensor<S> encode_context(const SgmP<S>& p, const SgmSideP<S>& side,
                         const std::vector<int>& window);

// Single-head scaled attention of the context summary over all grid tokens.
// Returns {attention row [1, h*w], attended feature [1, D2]}.
template <class S>
std::pair<Tensor<S>, Tensor<S>> attend_visual(const SgmSideP<S>& side, const Tensor<S>& q,
                                              const Tensor<S>& visual_tokens);

// ---------------------------------------------------------------------------
// Model.
// ---------------------------------------------------------------------------

template <class S>
struct ModelOutput {
  Tensor<S> logits;        // [w, charset+1]; class charset is the blank
  FeatureMap<S> features;  // backbone output (the context branch reads this)
};

template <class S>
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t init_seed);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const BackboneConfig& backbone_config() const { return bb_cfg_; }

  // Image [3, H, W] with H divisible by 8 and W by 4 (the resize targets
  // guarantee this). `diag` captures rearrangement attention when non-null.
  ModelOutput<S> forward(const Tensor<S>& image, FrmDiag<S>* diag = nullptr) const;

  FeatureMap<S> backbone_forward(const Tensor<S>& image) const;
  Tensor<S> head_forward(const FeatureMap<S>& f, FrmDiag<S>* diag = nullptr) const;

  // Mean cross-entropy over both context directions and all label positions
  // (2L terms). StateError when the branch is absent; InputError on label
  // indices outside the charset.
  Tensor<S> sgm_loss(const FeatureMap<S>& f, const std::vector<int>& label) const;

  // Per-position visual attention rows for inspection: for each label index,
  // {left [1, h*w], right [1, h*w]} as detached values.
  std::vector<std::pair<Tensor<S>, Tensor<S>>> sgm_attention(const FeatureMap<S>& f,
                                                             const std::vector<int>& label) const;

  bool has_sgm() const { return cfg_.with_sgm; }
  // Installs a freshly initialized context branch (phase B entry).
  void add_sgm(std::uint64_t seed);
  // Removes the context branch; sgm_loss afterwards raises StateError.
  void strip_sgm();

  ParamRegistry<S>& params() { return reg_; }
  const ParamRegistry<S>& params() const { return reg_; }

  const FrmP<S>& frm() const { return frm_; }
  const SgmP<S>& sgm() const { return sgm_; }
  const StemP<S>& stem() const { return stem_; }

 private:
  void build_backbone();
  void build_frm();
  void build_sgm();

  ModelConfig cfg_;
  BackboneConfig bb_cfg_;
  ParamRegistry<S> reg_;

  StemP<S> stem_;
  std::vector<std::pair<BlockKind, int>> blocks_;  // (kind, index into local_/global_)
  std::vector<LocalBlockP<S>> local_;
  std::vector<GlobalBlockP<S>> global_;
  ConvP<S> merge_;
  LinearP<S> proj_;
  LayerNormP<S> final_norm_;
  FrmP<S> frm_;
  SgmP<S> sgm_;
};

}  // namespace svtr2
