#ifndef MESORCH_NN_HPP_
#define MESORCH_NN_HPP_

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mesorch/rng.hpp"
#include "mesorch/tensor.hpp"

namespace mesorch {

enum class Init { kTruncNormal, kZero, kOne };

// A learnable tensor. Values (and optimizer moments) are kept on the float32
// grid so checkpoint blobs round-trip losslessly; all arithmetic runs in
// double and results are snapped back via snap_f32.
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<double> m, v;  // AdamW moments
  Init init = Init::kTruncNormal;
  bool decay = true;

  std::int64_t numel() const { return Tensor::numel_of(shape); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
  void ensure_moments() {
    if (m.empty()) {
      m.assign(value.size(), 0.0);
      v.assign(value.size(), 0.0);
    }
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
  }
};

inline double snap_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

class ParamStore {
 public:
  Parameter* create(const std::string& name, std::vector<int> shape, Init init,
                    bool decay);
  Parameter* find(const std::string& name) const;
  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
  std::int64_t total_params() const;
  void init_all(std::uint64_t seed);
  void zero_grads();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

// ---------------------------------------------------------------------------
// Elementwise / shape primitives
// ---------------------------------------------------------------------------

Tensor gelu(const Tensor& x);
// dy * gelu'(x), where x is the forward input.
Tensor gelu_backward(const Tensor& dy, const Tensor& x);

void softmax_lastdim(Tensor& x);
// y is the softmax output; returns dx.
Tensor softmax_backward_lastdim(const Tensor& dy, const Tensor& y);

// Bilinear interpolation, align-corners off; identity when sizes match.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);
Tensor bilinear_resize_backward(const Tensor& dy, int in_h, int in_w);

// ---------------------------------------------------------------------------
// Layers. forward() is const and writes intermediate state into an optional
// cache object; backward() reads the cache and accumulates parameter grads.
// Passing no cache gives a pure inference path safe for concurrent use.
// ---------------------------------------------------------------------------

struct Conv2d {
  int cin = 0, cout = 0, k = 1, stride = 1, pad = 0;
  Parameter* w = nullptr;  // [k, k, cin, cout]
  Parameter* b = nullptr;  // [cout]

  struct Cache {
    Tensor cols;
    int in_h = 0, in_w = 0;
  };

  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& prefix, int cin, int cout, int k,
         int stride, int pad, Init w_init = Init::kTruncNormal);

  static void out_size(int h, int w, int k, int s, int p, int* ho, int* wo);
  Tensor forward(const Tensor& x, Cache* cache) const;
  Tensor backward(const Tensor& dy, const Cache& cache) const;
  std::int64_t param_count() const;
  std::int64_t macs(int out_h, int out_w) const;
};

struct Linear {
  int cin = 0, cout = 0;
  Parameter* w = nullptr;  // [cin, cout]
  Parameter* b = nullptr;  // [cout]

  struct Cache {
    Tensor x;
  };

  Linear() = default;
  Linear(ParamStore& ps, const std::string& prefix, int cin, int cout,
         Init w_init = Init::kTruncNormal);

  Tensor forward(const Tensor& x, Cache* cache) const;
  Tensor backward(const Tensor& dy, const Cache& cache) const;
  std::int64_t param_count() const;
  std::int64_t macs(std::int64_t positions) const;
};

struct LayerNorm {
  int dim = 0;
  double eps = 1e-6;
  Parameter* g = nullptr;
  Parameter* b = nullptr;

  struct Cache {
    Tensor xhat;
    std::vector<double> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& prefix, int dim);

  Tensor forward(const Tensor& x, Cache* cache) const;
  Tensor backward(const Tensor& dy, const Cache& cache) const;
  std::int64_t param_count() const { return 2 * dim; }
};

// Pre-activation residual unit: x + conv3x3(gelu(ln(x))).
struct ConvBlock {
  LayerNorm norm;
  Conv2d conv;

  struct Cache {
    LayerNorm::Cache norm_c;
    Tensor gelu_in;
    Conv2d::Cache conv_c;
  };

  ConvBlock() = default;
  ConvBlock(ParamStore& ps, const std::string& prefix, int dim);

  Tensor forward(const Tensor& x, Cache* cache) const;
  Tensor backward(const Tensor& dy, const Cache& cache) const;
  std::int64_t param_count() const;
  std::int64_t macs(int h, int w) const;
};

// Pre-norm transformer block with spatial-reduction attention and a GELU MLP.
struct AttnBlock {
  int dim = 0, heads = 1, sr = 1, mlp_hidden = 0;
  LayerNorm ln1;
  Linear q, kv, proj;
  std::optional<Conv2d> sr_conv;
  std::optional<LayerNorm> sr_norm;
  LayerNorm ln2;
  Linear fc1, fc2;

  struct Cache {
    LayerNorm::Cache ln1_c;
    Tensor xn;  // [h, w, C] normalized input
    Linear::Cache q_c, kv_c;
    Conv2d::Cache sr_c;
    LayerNorm::Cache srn_c;
    int red_h = 0, red_w = 0;
    Tensor attn;  // [heads, N, M] softmaxed scores
    Tensor qmat, kmat, vmat;
    Linear::Cache proj_c;
    Tensor res1;  // x + attention output
    LayerNorm::Cache ln2_c;
    Linear::Cache fc1_c;
    Tensor fc1_out;
    Linear::Cache fc2_c;
  };

  AttnBlock() = default;
  AttnBlock(ParamStore& ps, const std::string& prefix, int dim, int heads, int sr,
            int mlp_ratio);

  Tensor forward(const Tensor& x, Cache* cache) const;
  Tensor backward(const Tensor& dy, const Cache& cache) const;
  std::int64_t param_count() const;
  std::int64_t macs(int h, int w) const;
};

struct PatchEmbed {
  Conv2d conv;
  LayerNorm norm;

  struct Cache {
    Conv2d::Cache conv_c;
    LayerNorm::Cache norm_c;
  };

  PatchEmbed() = default;
  PatchEmbed(ParamStore& ps, const std::string& prefix, int cin, int cout, int k,
             int stride, int pad);

  Tensor forward(const Tensor& x, Cache* cache) const;
  Tensor backward(const Tensor& dy, const Cache& cache) const;
  std::int64_t param_count() const;
  std::int64_t macs(int out_h, int out_w) const;
};

}  // namespace mesorch

#endif  // MESORCH_NN_HPP_
