#include "mesorch/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mesorch/serialize.hpp"

namespace mesorch {

const char* branch_name(int branch_id) {
  static const char* names[kNumBranches] = {"local_s1",  "local_s2",  "local_s3",
                                            "local_s4",  "global_s1", "global_s2",
                                            "global_s3", "global_s4"};
  check_input(branch_id >= 0 && branch_id < kNumBranches, "branch id out of range");
  return names[branch_id];
}

// Per-stage spatial extents for the shared 4/8/16/32 stride ladder. Stage 1
// is H/4 (input divisible by 4); deeper stages halve with ceil so small
// inputs saturate at 1 instead of vanishing.
static std::array<std::pair<int, int>, kNumScales> stage_extents(int h, int w) {
  std::array<std::pair<int, int>, kNumScales> e;
  int sh = h / 4, sw = w / 4;
  for (int i = 0; i < kNumScales; ++i) {
    e[i] = {sh, sw};
    sh = (sh + 1) / 2;
    sw = (sw + 1) / 2;
  }
  return e;
}

// ---------------------------------------------------------------------------
// MesorchConfig
// ---------------------------------------------------------------------------

MesorchConfig MesorchConfig::preset_config(const std::string& name) {
  MesorchConfig cfg;
  if (name == "toy") {
    cfg.preset = "toy";
  } else if (name == "paper") {
    cfg.preset = "paper";
    cfg.input_h = cfg.input_w = 512;
    cfg.local_channels = {96, 192, 384, 768};
    cfg.global_channels = {64, 128, 320, 512};
    cfg.local_depths = {2, 2, 2, 2};
    cfg.global_depths = {2, 2, 2, 2};
    cfg.heads = {1, 2, 5, 8};
    cfg.sr_ratios = {8, 4, 2, 1};
    cfg.mlp_ratio = 4;
    cfg.decoder_dim = 128;
    cfg.weight_hidden = 32;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected toy or paper)");
  }
  return cfg;
}

bool MesorchConfig::branch_active(int id) const {
  return std::find(active_branches.begin(), active_branches.end(), id) !=
         active_branches.end();
}

int MesorchConfig::local_stages() const {
  int n = 0;
  for (int id : active_branches)
    if (id < 4) n = std::max(n, id + 1);
  return n;
}

int MesorchConfig::global_stages() const {
  int n = 0;
  for (int id : active_branches)
    if (id >= 4) n = std::max(n, id - 4 + 1);
  return n;
}

void MesorchConfig::validate() const {
  check_config(preset == "toy" || preset == "paper" || preset == "custom",
               "preset must be toy, paper, or custom");
  check_config(input_h >= 8 && input_w >= 8, "input size must be at least 8x8");
  check_config(input_h % 4 == 0 && input_w % 4 == 0,
               "input size must be divisible by 4");
  if (preset != "custom") {
    check_config(input_h % 32 == 0 && input_w % 32 == 0,
                 "preset input size must be divisible by 32");
  }
  for (int i = 0; i < kNumScales; ++i) {
    check_config(local_channels[i] >= 1 && global_channels[i] >= 1,
                 "channel counts must be >= 1");
    check_config(local_depths[i] >= 1 && global_depths[i] >= 1,
                 "stage depths must be >= 1");
    check_config(heads[i] >= 1 && global_channels[i] % heads[i] == 0,
                 "heads must divide global channels at every scale");
    check_config(sr_ratios[i] >= 1, "sr ratios must be >= 1");
  }
  const auto ext = stage_extents(input_h, input_w);
  for (int i = 0; i < kNumScales; ++i) {
    check_config(sr_ratios[i] <= std::min(ext[i].first, ext[i].second),
                 "sr ratio exceeds stage " + std::to_string(i + 1) + " extent");
  }
  check_config(mlp_ratio >= 1, "mlp_ratio must be >= 1");
  check_config(decoder_dim >= 1, "decoder_dim must be >= 1");
  check_config(weight_hidden >= 1, "weight_hidden must be >= 1");
  check_config(fusion_mode == "adaptive" || fusion_mode == "uniform",
               "fusion_mode must be adaptive or uniform");
  check_config(freq_cutoff > 0.0 && freq_cutoff < 1.0, "freq_cutoff must be in (0,1)");
  check_config(!active_branches.empty(), "at least one branch must be active");
  std::set<int> seen;
  for (int id : active_branches) {
    check_config(id >= 0 && id < kNumBranches, "branch id out of range");
    check_config(seen.insert(id).second, "duplicate active branch id");
  }
  check_config(std::is_sorted(active_branches.begin(), active_branches.end()),
               "active_branches must be sorted ascending");
  check_config(post_prune_weighting == "adaptive" || post_prune_weighting == "frozen",
               "post_prune_weighting must be adaptive or frozen");
  if (frozen_fusion()) {
    check_config(static_cast<int>(frozen_weights.size()) == k_active(),
                 "frozen_weights size must equal the active branch count");
    double sum = 0.0;
    for (double wgt : frozen_weights) {
      check_config(wgt >= 0.0, "frozen weights must be nonnegative");
      sum += wgt;
    }
    check_config(std::abs(sum - 1.0) < 1e-6, "frozen weights must sum to 1");
  }
}

std::string MesorchConfig::canonical_json() const { return config_to_json(*this).dump(); }

std::uint64_t MesorchConfig::hash() const { return fnv1a64(canonical_json()); }

// ---------------------------------------------------------------------------
// LocalEncoder
// ---------------------------------------------------------------------------

LocalEncoder::LocalEncoder(ParamStore& ps, const MesorchConfig& cfg, int n_stages)
    : stem(ps, "local.stem", 6, cfg.local_channels[0], 4, 4, 0),
      stem_norm(ps, "local.stem_norm", cfg.local_channels[0]) {
  for (int s = 0; s < n_stages; ++s) {
    std::vector<ConvBlock> blocks;
    for (int b = 0; b < cfg.local_depths[s]; ++b) {
      blocks.emplace_back(ps, "local.s" + std::to_string(s + 1) + ".b" + std::to_string(b),
                          cfg.local_channels[s]);
    }
    stages.push_back(std::move(blocks));
    if (s + 1 < n_stages) {
      ds_norms.emplace_back(ps, "local.ds" + std::to_string(s + 1) + ".norm",
                            cfg.local_channels[s]);
      ds_convs.emplace_back(ps, "local.ds" + std::to_string(s + 1) + ".conv",
                            cfg.local_channels[s], cfg.local_channels[s + 1], 3, 2, 1);
    }
  }
}

std::vector<Tensor> LocalEncoder::forward(const Tensor& x, Cache* cache) const {
  if (cache) {
    cache->stage_c.assign(stages.size(), {});
    cache->ds_norm_c.assign(ds_norms.size(), {});
    cache->ds_conv_c.assign(ds_convs.size(), {});
  }
  Tensor h = stem.forward(x, cache ? &cache->stem_c : nullptr);
  h = stem_norm.forward(h, cache ? &cache->stem_norm_c : nullptr);
  std::vector<Tensor> pyramid;
  for (size_t s = 0; s < stages.size(); ++s) {
    if (cache) cache->stage_c[s].resize(stages[s].size());
    for (size_t b = 0; b < stages[s].size(); ++b) {
      h = stages[s][b].forward(h, cache ? &cache->stage_c[s][b] : nullptr);
    }
    pyramid.push_back(h);
    if (s + 1 < stages.size()) {
      h = ds_norms[s].forward(h, cache ? &cache->ds_norm_c[s] : nullptr);
      h = ds_convs[s].forward(h, cache ? &cache->ds_conv_c[s] : nullptr);
    }
  }
  return pyramid;
}

void LocalEncoder::backward(const std::vector<Tensor>& dpyr, const Cache& cache) const {
  Tensor dh;
  for (int s = static_cast<int>(stages.size()) - 1; s >= 0; --s) {
    Tensor dstage = dpyr[static_cast<size_t>(s)];
    if (s + 1 < static_cast<int>(stages.size())) {
      Tensor d = ds_convs[static_cast<size_t>(s)].backward(dh, cache.ds_conv_c[static_cast<size_t>(s)]);
      d = ds_norms[static_cast<size_t>(s)].backward(d, cache.ds_norm_c[static_cast<size_t>(s)]);
      for (std::int64_t i = 0; i < dstage.numel(); ++i) dstage[i] += d[i];
    }
    for (int b = static_cast<int>(stages[static_cast<size_t>(s)].size()) - 1; b >= 0; --b) {
      dstage = stages[static_cast<size_t>(s)][static_cast<size_t>(b)].backward(
          dstage, cache.stage_c[static_cast<size_t>(s)][static_cast<size_t>(b)]);
    }
    dh = std::move(dstage);
  }
  Tensor d = stem_norm.backward(dh, cache.stem_norm_c);
  stem.backward(d, cache.stem_c);
}

// ---------------------------------------------------------------------------
// GlobalEncoder
// ---------------------------------------------------------------------------

GlobalEncoder::GlobalEncoder(ParamStore& ps, const MesorchConfig& cfg, int n_stages) {
  for (int s = 0; s < n_stages; ++s) {
    const int cin = (s == 0) ? 6 : cfg.global_channels[s - 1];
    const int k = (s == 0) ? 7 : 3;
    const int stride = (s == 0) ? 4 : 2;
    const int pad = (s == 0) ? 3 : 1;
    embeds.emplace_back(ps, "global.p" + std::to_string(s + 1), cin,
                        cfg.global_channels[s], k, stride, pad);
    std::vector<AttnBlock> blocks;
    for (int b = 0; b < cfg.global_depths[s]; ++b) {
      blocks.emplace_back(ps, "global.s" + std::to_string(s + 1) + ".b" + std::to_string(b),
                          cfg.global_channels[s], cfg.heads[s], cfg.sr_ratios[s],
                          cfg.mlp_ratio);
    }
    stages.push_back(std::move(blocks));
    out_norms.emplace_back(ps, "global.s" + std::to_string(s + 1) + ".norm",
                           cfg.global_channels[s]);
  }
}

std::vector<Tensor> GlobalEncoder::forward(const Tensor& x, Cache* cache) const {
  if (cache) {
    cache->embed_c.assign(embeds.size(), {});
    cache->stage_c.assign(stages.size(), {});
    cache->out_norm_c.assign(out_norms.size(), {});
  }
  std::vector<Tensor> pyramid;
  Tensor h = x;
  for (size_t s = 0; s < stages.size(); ++s) {
    h = embeds[s].forward(h, cache ? &cache->embed_c[s] : nullptr);
    if (cache) cache->stage_c[s].resize(stages[s].size());
    for (size_t b = 0; b < stages[s].size(); ++b) {
      h = stages[s][b].forward(h, cache ? &cache->stage_c[s][b] : nullptr);
    }
    Tensor out = out_norms[s].forward(h, cache ? &cache->out_norm_c[s] : nullptr);
    pyramid.push_back(out);
    // next stage consumes the pre-norm features
  }
  return pyramid;
}

void GlobalEncoder::backward(const std::vector<Tensor>& dpyr, const Cache& cache) const {
  Tensor dh;
  for (int s = static_cast<int>(stages.size()) - 1; s >= 0; --s) {
    Tensor dstage =
        out_norms[static_cast<size_t>(s)].backward(dpyr[static_cast<size_t>(s)],
                                                   cache.out_norm_c[static_cast<size_t>(s)]);
    if (!dh.empty()) {
      for (std::int64_t i = 0; i < dstage.numel(); ++i) dstage[i] += dh[i];
    }
    for (int b = static_cast<int>(stages[static_cast<size_t>(s)].size()) - 1; b >= 0; --b) {
      dstage = stages[static_cast<size_t>(s)][static_cast<size_t>(b)].backward(
          dstage, cache.stage_c[static_cast<size_t>(s)][static_cast<size_t>(b)]);
    }
    dh = embeds[static_cast<size_t>(s)].backward(dstage, cache.embed_c[static_cast<size_t>(s)]);
  }
}

// ---------------------------------------------------------------------------
// ScaleDecoder
// ---------------------------------------------------------------------------

ScaleDecoder::ScaleDecoder(ParamStore& ps, const std::string& prefix, int cin, int dim)
    : in_channels(cin), proj(ps, prefix + ".proj", cin, dim), head(ps, prefix + ".head", dim, 1) {}

Tensor ScaleDecoder::forward(const Tensor& feat, int out_h, int out_w,
                             Cache* cache) const {
  check_config(feat.shape.size() == 3 && feat.shape[2] == in_channels,
               "decoder expected " + std::to_string(in_channels) + " channels, got " +
                   feat.shape_str());
  Tensor p = proj.forward(feat, cache ? &cache->proj_c : nullptr);
  if (cache) {
    cache->feat_h = feat.shape[0];
    cache->feat_w = feat.shape[1];
  }
  Tensor up = bilinear_resize(p, out_h, out_w);
  return head.forward(up, cache ? &cache->head_c : nullptr);
}

Tensor ScaleDecoder::backward(const Tensor& dy, const Cache& cache) const {
  Tensor dup = head.backward(dy, cache.head_c);
  Tensor dp = bilinear_resize_backward(dup, cache.feat_h, cache.feat_w);
  return proj.backward(dp, cache.proj_c);
}

// ---------------------------------------------------------------------------
// WeightTower
// ---------------------------------------------------------------------------

WeightTower::WeightTower(ParamStore& ps, const MesorchConfig& cfg)
    : c1(ps, "weight.c1", 9, cfg.weight_hidden, 3, 2, 1),
      c2(ps, "weight.c2", cfg.weight_hidden, cfg.weight_hidden, 3, 2, 1),
      head(ps, "weight.head", cfg.weight_hidden, cfg.k_active(), 1, 1, 0, Init::kZero) {}

Tensor WeightTower::forward(const Tensor& x, Cache* cache) const {
  Tensor z1 = c1.forward(x, cache ? &cache->c1_c : nullptr);
  if (cache) cache->a1_in = z1;
  Tensor a1 = gelu(z1);
  Tensor z2 = c2.forward(a1, cache ? &cache->c2_c : nullptr);
  if (cache) cache->a2_in = z2;
  Tensor a2 = gelu(z2);
  Tensor logits = head.forward(a2, cache ? &cache->head_c : nullptr);
  softmax_lastdim(logits);
  if (cache) cache->weights = logits;
  return logits;
}

void WeightTower::backward(const Tensor& dweights, const Cache& cache) const {
  Tensor dlogits = softmax_backward_lastdim(dweights, cache.weights);
  Tensor da2 = head.backward(dlogits, cache.head_c);
  Tensor dz2 = gelu_backward(da2, cache.a2_in);
  Tensor da1 = c2.backward(dz2, cache.c2_c);
  Tensor dz1 = gelu_backward(da1, cache.a1_in);
  c1.backward(dz1, cache.c1_c);
}

// ---------------------------------------------------------------------------
// Mesorch
// ---------------------------------------------------------------------------

Tensor sigmoid(const Tensor& logits) {
  Tensor p = logits;
  for (auto& v : p.data) {
    v = (v >= 0.0) ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return p;
}

Mesorch::Mesorch(const MesorchConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int ls = cfg_.local_stages();
  const int gs = cfg_.global_stages();
  if (ls > 0) local_.emplace(store_, cfg_, ls);
  if (gs > 0) global_.emplace(store_, cfg_, gs);
  for (int id : cfg_.active_branches) {
    const int scale = (id < 4) ? id : id - 4;
    const int cin = (id < 4) ? cfg_.local_channels[scale] : cfg_.global_channels[scale];
    decoder_branch_.push_back(id);
    decoders_.emplace_back(store_, std::string("dec.") + branch_name(id), cin,
                           cfg_.decoder_dim);
  }
  if (cfg_.uses_tower()) tower_.emplace(store_, cfg_);
  store_.init_all(cfg_.seed);
}

std::vector<Tensor> Mesorch::local_encode(const Tensor& x, LocalEncoder::Cache* cache) const {
  check_config(local_.has_value(), "no local branches are active");
  check_config(x.shape.size() == 3 && x.shape[2] == 6,
               "local input must be [H, W, 6], got " + x.shape_str());
  check_config(x.shape[0] == cfg_.input_h && x.shape[1] == cfg_.input_w,
               "local input " + x.shape_str() + " does not match configured size " +
                   std::to_string(cfg_.input_h) + "x" + std::to_string(cfg_.input_w));
  check_input(x.all_finite(), "local input contains non-finite values");
  return local_->forward(x, cache);
}

std::vector<Tensor> Mesorch::global_encode(const Tensor& x, GlobalEncoder::Cache* cache) const {
  check_config(global_.has_value(), "no global branches are active");
  check_config(x.shape.size() == 3 && x.shape[2] == 6,
               "global input must be [H, W, 6], got " + x.shape_str());
  check_config(x.shape[0] == cfg_.input_h && x.shape[1] == cfg_.input_w,
               "global input " + x.shape_str() + " does not match configured size " +
                   std::to_string(cfg_.input_h) + "x" + std::to_string(cfg_.input_w));
  check_input(x.all_finite(), "global input contains non-finite values");
  return global_->forward(x, cache);
}

Tensor Mesorch::decode_scale(const Tensor& feature, int branch_id, int out_h, int out_w,
                             ScaleDecoder::Cache* cache) const {
  for (size_t i = 0; i < decoder_branch_.size(); ++i) {
    if (decoder_branch_[i] == branch_id) {
      return decoders_[i].forward(feature, out_h, out_w, cache);
    }
  }
  throw ConfigError(std::string("branch ") + branch_name(branch_id) + " is not active");
}

Tensor Mesorch::adaptive_weights(const Tensor& weight_input, WeightTower::Cache* cache) const {
  if (cfg_.fusion_mode != "adaptive") {
    throw NotApplicableError("adaptive_weights requires fusion_mode=adaptive");
  }
  check_config(weight_input.shape.size() == 3 && weight_input.shape[2] == 9,
               "weight input must be [H, W, 9], got " + weight_input.shape_str());
  if (cfg_.frozen_fusion()) {
    const int h4 = weight_input.shape[0] / 4, w4 = weight_input.shape[1] / 4;
    Tensor w({h4, w4, cfg_.k_active()});
    for (int y = 0; y < h4; ++y)
      for (int x = 0; x < w4; ++x)
        for (int j = 0; j < cfg_.k_active(); ++j)
          w.at(y, x, j) = cfg_.frozen_weights[static_cast<size_t>(j)];
    return w;
  }
  return tower_->forward(weight_input, cache);
}

FinalPrediction Mesorch::fuse(const std::vector<Tensor>& preds, const Tensor* weights,
                              int out_h, int out_w) {
  check_input(!preds.empty(), "fuse requires at least one prediction map");
  const int h4 = preds[0].shape[0], w4 = preds[0].shape[1];
  for (const Tensor& p : preds) {
    check_input(p.shape.size() == 3 && p.shape[0] == h4 && p.shape[1] == w4 &&
                    p.shape[2] == 1,
                "prediction maps must share shape [H/4, W/4, 1]");
  }
  const int k = static_cast<int>(preds.size());
  FinalPrediction out;
  out.summed = Tensor({h4, w4, 1});
  if (weights) {
    check_input(weights->shape.size() == 3 && weights->shape[0] == h4 &&
                    weights->shape[1] == w4 && weights->shape[2] == k,
                "weight map shape does not match predictions");
    for (int y = 0; y < h4; ++y)
      for (int x = 0; x < w4; ++x) {
        double acc = 0.0;
        for (int j = 0; j < k; ++j) acc += weights->at(y, x, j) * preds[static_cast<size_t>(j)].at(y, x, 0);
        out.summed.at(y, x, 0) = acc;
      }
  } else {
    for (int y = 0; y < h4; ++y)
      for (int x = 0; x < w4; ++x) {
        double acc = 0.0;
        for (int j = 0; j < k; ++j) acc += preds[static_cast<size_t>(j)].at(y, x, 0);
        out.summed.at(y, x, 0) = acc;
      }
  }
  out.full = bilinear_resize(out.summed, out_h, out_w);
  return out;
}

ForwardResult Mesorch::forward(const Image& image, Cache* cache) const {
  validate_image(image);
  check_config(image.height == cfg_.input_h && image.width == cfg_.input_w,
               "image size does not match configured input size");
  EnhancedInput inputs = make_enhanced_inputs(image, cfg_.freq_cutoff);
  return forward_parts(inputs, cache);
}

template <typename F>
static auto run_stage(const char* stage, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(std::string(stage) + ": " + e.what());
  }
}

ForwardResult Mesorch::forward_parts(const EnhancedInput& inputs, Cache* cache) const {
  ForwardResult res;
  const int h = inputs.weight_input.shape[0];
  const int w = inputs.weight_input.shape[1];
  const int h4 = h / 4, w4 = w / 4;
  if (cache) {
    cache->in_h = h;
    cache->in_w = w;
    cache->dec_c.assign(decoders_.size(), {});
  }

  if (local_) {
    res.local_pyramid = run_stage("local_encode", [&] {
      return local_->forward(inputs.local_input, cache ? &cache->local_c : nullptr);
    });
  }
  if (global_) {
    res.global_pyramid = run_stage("global_encode", [&] {
      return global_->forward(inputs.global_input, cache ? &cache->global_c : nullptr);
    });
  }

  res.branch_ids = cfg_.active_branches;
  for (size_t i = 0; i < decoders_.size(); ++i) {
    const int id = decoder_branch_[i];
    const int scale = (id < 4) ? id : id - 4;
    const Tensor& feat = (id < 4) ? res.local_pyramid[static_cast<size_t>(scale)]
                                  : res.global_pyramid[static_cast<size_t>(scale)];
    res.preds.push_back(run_stage("decode_scale", [&] {
      return decoders_[i].forward(feat, h4, w4, cache ? &cache->dec_c[i] : nullptr);
    }));
  }

  const int k = cfg_.k_active();
  res.pred_all = Tensor({h4, w4, k});
  for (int j = 0; j < k; ++j)
    for (int y = 0; y < h4; ++y)
      for (int x = 0; x < w4; ++x)
        res.pred_all.at(y, x, j) = res.preds[static_cast<size_t>(j)].at(y, x, 0);

  const Tensor* weights = nullptr;
  if (cfg_.fusion_mode == "adaptive") {
    res.weights = run_stage("adaptive_weights", [&] {
      return adaptive_weights(inputs.weight_input, cache ? &cache->tower_c : nullptr);
    });
    weights = &res.weights;
  }

  FinalPrediction fp = run_stage("fuse", [&] { return fuse(res.preds, weights, h, w); });
  res.summed = std::move(fp.summed);
  res.full = std::move(fp.full);
  res.prob = sigmoid(res.full);
  return res;
}

void Mesorch::backward(const Tensor& dfull, const ForwardResult& res, const Cache& cache) const {
  const int h4 = res.summed.shape[0], w4 = res.summed.shape[1];
  Tensor dsummed = bilinear_resize_backward(dfull, h4, w4);

  const int k = cfg_.k_active();
  std::vector<Tensor> dpreds(static_cast<size_t>(k));
  if (cfg_.fusion_mode == "adaptive") {
    for (int j = 0; j < k; ++j) {
      Tensor d({h4, w4, 1});
      for (int y = 0; y < h4; ++y)
        for (int x = 0; x < w4; ++x)
          d.at(y, x, 0) = dsummed.at(y, x, 0) * res.weights.at(y, x, j);
      dpreds[static_cast<size_t>(j)] = std::move(d);
    }
    if (cfg_.uses_tower()) {
      Tensor dw({h4, w4, k});
      for (int y = 0; y < h4; ++y)
        for (int x = 0; x < w4; ++x)
          for (int j = 0; j < k; ++j)
            dw.at(y, x, j) = dsummed.at(y, x, 0) * res.pred_all.at(y, x, j);
      tower_->backward(dw, cache.tower_c);
    }
  } else {
    for (int j = 0; j < k; ++j) dpreds[static_cast<size_t>(j)] = dsummed;
  }

  std::vector<Tensor> dlocal, dglobal;
  for (size_t s = 0; s < res.local_pyramid.size(); ++s)
    dlocal.emplace_back(res.local_pyramid[s].shape);
  for (size_t s = 0; s < res.global_pyramid.size(); ++s)
    dglobal.emplace_back(res.global_pyramid[s].shape);

  for (size_t i = 0; i < decoders_.size(); ++i) {
    const int id = decoder_branch_[i];
    const int scale = (id < 4) ? id : id - 4;
    Tensor dfeat = decoders_[i].backward(dpreds[i], cache.dec_c[i]);
    Tensor& acc = (id < 4) ? dlocal[static_cast<size_t>(scale)]
                           : dglobal[static_cast<size_t>(scale)];
    for (std::int64_t t = 0; t < acc.numel(); ++t) acc[t] += dfeat[t];
  }

  if (local_) local_->backward(dlocal, cache.local_c);
  if (global_) global_->backward(dglobal, cache.global_c);
}

std::vector<LayerCost> Mesorch::cost(int input_h, int input_w) const {
  check_config(input_h % 4 == 0 && input_w % 4 == 0 && input_h >= 8 && input_w >= 8,
               "cost input size must be >= 8 and divisible by 4");
  const auto ext = stage_extents(input_h, input_w);
  const int h4 = input_h / 4, w4 = input_w / 4;
  std::vector<LayerCost> out;

  if (local_) {
    out.push_back({"local.stem",
                   local_->stem.param_count() + local_->stem_norm.param_count(),
                   local_->stem.macs(ext[0].first, ext[0].second)});
    for (size_t s = 0; s < local_->stages.size(); ++s) {
      for (size_t b = 0; b < local_->stages[s].size(); ++b) {
        out.push_back({"local.s" + std::to_string(s + 1) + ".b" + std::to_string(b),
                       local_->stages[s][b].param_count(),
                       local_->stages[s][b].macs(ext[s].first, ext[s].second)});
      }
      if (s < local_->ds_convs.size()) {
        out.push_back({"local.ds" + std::to_string(s + 1),
                       local_->ds_norms[s].param_count() + local_->ds_convs[s].param_count(),
                       local_->ds_convs[s].macs(ext[s + 1].first, ext[s + 1].second)});
      }
    }
  }
  if (global_) {
    for (size_t s = 0; s < global_->stages.size(); ++s) {
      out.push_back({"global.p" + std::to_string(s + 1),
                     global_->embeds[s].param_count(),
                     global_->embeds[s].macs(ext[s].first, ext[s].second)});
      for (size_t b = 0; b < global_->stages[s].size(); ++b) {
        out.push_back({"global.s" + std::to_string(s + 1) + ".b" + std::to_string(b),
                       global_->stages[s][b].param_count(),
                       global_->stages[s][b].macs(ext[s].first, ext[s].second)});
      }
      out.push_back({"global.s" + std::to_string(s + 1) + ".norm",
                     global_->out_norms[s].param_count(), 0});
    }
  }
  for (size_t i = 0; i < decoders_.size(); ++i) {
    const int id = decoder_branch_[i];
    const int scale = (id < 4) ? id : id - 4;
    const std::int64_t feat_pos =
        static_cast<std::int64_t>(ext[static_cast<size_t>(scale)].first) *
        ext[static_cast<size_t>(scale)].second;
    const std::int64_t out_pos = static_cast<std::int64_t>(h4) * w4;
    out.push_back({std::string("dec.") + branch_name(id),
                   decoders_[i].proj.param_count() + decoders_[i].head.param_count(),
                   decoders_[i].proj.macs(feat_pos) + decoders_[i].head.macs(out_pos)});
  }
  if (tower_) {
    int th = (input_h + 1) / 2, tw = (input_w + 1) / 2;
    out.push_back({"weight.c1", tower_->c1.param_count(), tower_->c1.macs(th, tw)});
    th = (th + 1) / 2;
    tw = (tw + 1) / 2;
    out.push_back({"weight.c2", tower_->c2.param_count(), tower_->c2.macs(th, tw)});
    out.push_back({"weight.head", tower_->head.param_count(), tower_->head.macs(th, tw)});
  }
  return out;
}

}  // namespace mesorch
