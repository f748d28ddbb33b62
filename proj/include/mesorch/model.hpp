#ifndef MESORCH_MODEL_HPP_
#define MESORCH_MODEL_HPP_

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mesorch/dct.hpp"
#include "mesorch/nn.hpp"
#include "mesorch/tensor.hpp"

namespace mesorch {

constexpr int kNumScales = 4;
constexpr int kNumBranches = 8;  // 0..3 local s1..s4, 4..7 global s1..s4
constexpr const char* kToolVersion = "0.1.0";

const char* branch_name(int branch_id);

struct MesorchConfig {
  std::string preset = "toy";  // toy | paper | custom
  int input_h = 64;
  int input_w = 64;
  std::array<int, 4> local_channels{16, 32, 64, 128};
  std::array<int, 4> global_channels{16, 32, 64, 128};
  std::array<int, 4> local_depths{2, 2, 2, 2};
  std::array<int, 4> global_depths{2, 2, 2, 2};
  std::array<int, 4> heads{1, 1, 2, 2};
  std::array<int, 4> sr_ratios{4, 2, 1, 1};
  int mlp_ratio = 2;
  int decoder_dim = 32;
  int weight_hidden = 16;
  std::string fusion_mode = "adaptive";  // adaptive | uniform
  double freq_cutoff = 1.0 / 16.0;
  std::vector<int> active_branches{0, 1, 2, 3, 4, 5, 6, 7};
  std::string post_prune_weighting = "adaptive";  // adaptive | frozen
  std::vector<double> frozen_weights;             // per active branch, frozen mode
  std::uint64_t seed = 0;
  bool deterministic = true;

  static MesorchConfig preset_config(const std::string& name);
  void validate() const;
  std::string canonical_json() const;
  std::uint64_t hash() const;

  int k_active() const { return static_cast<int>(active_branches.size()); }
  bool branch_active(int id) const;
  // Highest active scale per side (1..4), 0 when the side is fully inactive.
  int local_stages() const;
  int global_stages() const;
  bool uses_tower() const {
    return fusion_mode == "adaptive" &&
           !(post_prune_weighting == "frozen" && !frozen_weights.empty());
  }
  bool frozen_fusion() const {
    return fusion_mode == "adaptive" && post_prune_weighting == "frozen" &&
           !frozen_weights.empty();
  }
};

// Stage-wise convolutional encoder: stride-4 stem, pre-activation residual
// 3x3 blocks, stride-2 conv downsampling between stages.
struct LocalEncoder {
  Conv2d stem;
  LayerNorm stem_norm;
  std::vector<std::vector<ConvBlock>> stages;
  std::vector<LayerNorm> ds_norms;
  std::vector<Conv2d> ds_convs;

  struct Cache {
    Conv2d::Cache stem_c;
    LayerNorm::Cache stem_norm_c;
    std::vector<std::vector<ConvBlock::Cache>> stage_c;
    std::vector<LayerNorm::Cache> ds_norm_c;
    std::vector<Conv2d::Cache> ds_conv_c;
  };

  LocalEncoder() = default;
  LocalEncoder(ParamStore& ps, const MesorchConfig& cfg, int n_stages);
  std::vector<Tensor> forward(const Tensor& x, Cache* cache) const;
  void backward(const std::vector<Tensor>& dpyr, const Cache& cache) const;
};

// Stage-wise self-attention encoder: overlapping patch embeddings, pre-norm
// attention blocks with spatial-reduction, per-stage output norm.
struct GlobalEncoder {
  std::vector<PatchEmbed> embeds;
  std::vector<std::vector<AttnBlock>> stages;
  std::vector<LayerNorm> out_norms;

  struct Cache {
    std::vector<PatchEmbed::Cache> embed_c;
    std::vector<std::vector<AttnBlock::Cache>> stage_c;
    std::vector<LayerNorm::Cache> out_norm_c;
  };

  GlobalEncoder() = default;
  GlobalEncoder(ParamStore& ps, const MesorchConfig& cfg, int n_stages);
  std::vector<Tensor> forward(const Tensor& x, Cache* cache) const;
  void backward(const std::vector<Tensor>& dpyr, const Cache& cache) const;
};

// Per branch-scale head: linear projection to a shared width, bilinear
// upsample to H/4 x W/4, linear 1-channel head.
struct ScaleDecoder {
  int in_channels = 0;
  Linear proj;
  Linear head;

  struct Cache {
    Linear::Cache proj_c;
    int feat_h = 0, feat_w = 0;
    Linear::Cache head_c;
  };

  ScaleDecoder() = default;
  ScaleDecoder(ParamStore& ps, const std::string& prefix, int cin, int dim);
  Tensor forward(const Tensor& feat, int out_h, int out_w, Cache* cache) const;
  Tensor backward(const Tensor& dy, const Cache& cache) const;
};

// Conv tower over {x, x_h, x_l}: two stride-2 convs with GELU, a zero-init
// 1x1 head, per-pixel softmax over the K active branches.
struct WeightTower {
  Conv2d c1, c2, head;

  struct Cache {
    Conv2d::Cache c1_c, c2_c, head_c;
    Tensor a1_in, a2_in;  // pre-GELU activations
    Tensor weights;       // softmax output
  };

  WeightTower() = default;
  WeightTower(ParamStore& ps, const MesorchConfig& cfg);
  Tensor forward(const Tensor& x, Cache* cache) const;
  void backward(const Tensor& dweights, const Cache& cache) const;
};

struct FinalPrediction {
  Tensor summed;  // [H/4, W/4, 1]
  Tensor full;    // [H, W, 1]
};

struct ForwardResult {
  std::vector<Tensor> local_pyramid;
  std::vector<Tensor> global_pyramid;
  std::vector<int> branch_ids;  // active branches, ascending
  std::vector<Tensor> preds;    // one [H/4, W/4, 1] map per active branch
  Tensor pred_all;              // [H/4, W/4, K]
  Tensor weights;               // [H/4, W/4, K]; empty in uniform mode
  Tensor summed;
  Tensor full;
  Tensor prob;  // logistic of full
};

Tensor sigmoid(const Tensor& logits);

struct LayerCost {
  std::string name;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

class Mesorch {
 public:
  struct Cache {
    LocalEncoder::Cache local_c;
    GlobalEncoder::Cache global_c;
    std::vector<ScaleDecoder::Cache> dec_c;
    WeightTower::Cache tower_c;
    int in_h = 0, in_w = 0;
  };

  explicit Mesorch(const MesorchConfig& cfg);

  const MesorchConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  std::vector<Tensor> local_encode(const Tensor& local_input,
                                   LocalEncoder::Cache* cache = nullptr) const;
  std::vector<Tensor> global_encode(const Tensor& global_input,
                                    GlobalEncoder::Cache* cache = nullptr) const;
  Tensor decode_scale(const Tensor& feature, int branch_id, int out_h, int out_w,
                      ScaleDecoder::Cache* cache = nullptr) const;
  Tensor adaptive_weights(const Tensor& weight_input,
                          WeightTower::Cache* cache = nullptr) const;
  // weights == nullptr selects uniform summation.
  static FinalPrediction fuse(const std::vector<Tensor>& preds, const Tensor* weights,
                              int out_h, int out_w);

  ForwardResult forward(const Image& image, Cache* cache = nullptr) const;
  ForwardResult forward_parts(const EnhancedInput& inputs, Cache* cache = nullptr) const;
  // Accumulates parameter gradients; dfull matches result.full.
  void backward(const Tensor& dfull, const ForwardResult& res, const Cache& cache) const;

  std::vector<LayerCost> cost(int input_h, int input_w) const;
  std::int64_t num_params() const { return store_.total_params(); }

 private:
  MesorchConfig cfg_;
  ParamStore store_;
  std::optional<LocalEncoder> local_;
  std::optional<GlobalEncoder> global_;
  std::vector<int> decoder_branch_;  // branch id per decoder slot
  std::vector<ScaleDecoder> decoders_;
  std::optional<WeightTower> tower_;
};

// Checkpoint I/O (directory with manifest.json + params/<name>.bin float32
// little-endian blobs).
struct CheckpointMeta {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
};

void save_model(const Mesorch& model, const std::string& dir, const CheckpointMeta& meta);
std::unique_ptr<Mesorch> load_model(const std::string& dir, CheckpointMeta* meta = nullptr);

}  // namespace mesorch

#endif  // MESORCH_MODEL_HPP_
