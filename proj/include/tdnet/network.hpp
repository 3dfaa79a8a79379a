#pragma once

#include <array>
#include <string>
#include <vector>

#include "tdnet/core_types.hpp"
#include "tdnet/layers.hpp"
#include "tdnet/rng.hpp"
#include "tdnet/tensor.hpp"

namespace tdnet {

enum class InitScheme { Kaiming, Xavier, Normal };

InitScheme init_scheme_from_string(const std::string& name);
const char* init_scheme_name(InitScheme s);

/// One shared encoder, N decoders at per-decoder dilation rates.
struct TDNetConfig {
  int num_classes = 4;
  int num_decoders = 3;
  std::vector<int> dilation_rates = {1, 3, 6};
  std::vector<std::string> init_schemes = {"kaiming", "xavier", "normal"};
  int base_channels = 16;
  int depth = 5;
  std::array<double, 2> bottleneck_dropout_range = {0.0, 0.5};

  void validate() const;
  int64_t level_channels(int level) const;
  int64_t pool_factor() const;  // 2^(depth-1)

  /// Default scheme assignment for N decoders: cycle kaiming/xavier/normal.
  static std::vector<std::string> default_schemes(int num_decoders);
};

struct NetworkOutput {
  std::vector<Tensor> logits;         // N x (C,D,H,W)
  std::vector<ProbabilityMap> probs;  // per-voxel softmax of each logits entry
};

struct ParameterCensus {
  int64_t total = 0;
  int64_t encoder = 0;
  std::vector<int64_t> decoders;
};

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = true;  // norm scale/shift params opt out of weight decay
};

namespace detail {
struct ConvRef {
  int w = -1, b = -1;
};
struct NormRef {
  int gamma = -1, beta = -1;
};
struct BlockRef {
  ConvRef c1;
  NormRef n1;
  ConvRef c2;
  NormRef n2;
};
struct DecoderRef {
  std::vector<ConvRef> reduce;  // per level, applied before upsampling
  std::vector<BlockRef> blocks;
  ConvRef head;
};

struct BlockCache {
  Tensor x;  // block input
  nn::InstNormCache<float> in1, in2;
  Tensor r1;   // first activation output, also second conv input
  Tensor out;  // block output
};
}  // namespace detail

/// Activations saved by a training-mode forward, consumed by backward.
struct Trace {
  std::vector<detail::BlockCache> enc_blocks;
  std::vector<std::vector<int64_t>> pool_idx;
  struct DecoderTrace {
    nn::DropoutMask dropout;
    Tensor dropped;  // decoder input when dropout actually fired
    std::vector<detail::BlockCache> blocks;  // indexed by level
  };
  std::vector<DecoderTrace> decoders;
};

class TDNet {
public:
  TDNet(TDNetConfig cfg, uint64_t seed);

  const TDNetConfig& config() const { return cfg_; }

  /// In training mode the bottleneck features feeding each auxiliary decoder
  /// (index >= 1) get an independent channel-dropout perturbation drawn from
  /// `dropout_seed`; the primary decoder always sees clean features.
  /// Inference mode applies no dropout and is deterministic.
  NetworkOutput forward(const Tensor& patch, bool training, uint64_t dropout_seed = 0,
                        Trace* trace = nullptr, nn::Workspace<float>* ws = nullptr) const;

  /// Accumulates parameter gradients from per-branch logit gradients.
  void backward(const Trace& trace, const std::vector<Tensor>& grad_logits,
                nn::Workspace<float>* ws = nullptr);

  void zero_grads();

  ParameterCensus census() const;

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

private:
  detail::BlockRef make_block(const std::string& prefix, int64_t in_ch, int64_t out_ch,
                              InitScheme scheme, Rng& rng);
  detail::ConvRef make_conv(const std::string& name, int64_t in_ch, int64_t out_ch, int ksize,
                            InitScheme scheme, Rng& rng);

  Tensor block_forward(const detail::BlockRef& ref, const Tensor& x, int dilation,
                       detail::BlockCache* cache, nn::Workspace<float>& ws) const;
  Tensor block_backward(const detail::BlockRef& ref, const detail::BlockCache& cache,
                        int dilation, const Tensor& gy, nn::Workspace<float>& ws);

  TDNetConfig cfg_;
  std::vector<Param> params_;
  std::vector<detail::BlockRef> enc_;
  std::vector<detail::DecoderRef> dec_;
  std::vector<InitScheme> schemes_;
};

/// Zeroes a random channel subset of expected fraction r (drawn uniformly
/// from rate_range) and rescales survivors by 1/(1-r).
Tensor feature_dropout(const Tensor& features, const std::array<double, 2>& rate_range,
                       uint64_t seed);

}  // namespace tdnet
