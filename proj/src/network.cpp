#include "tdnet/network.hpp"

#include <cmath>
#include <stdexcept>

namespace tdnet {

InitScheme init_scheme_from_string(const std::string& name) {
  if (name == "kaiming") return InitScheme::Kaiming;
  if (name == "xavier") return InitScheme::Xavier;
  if (name == "normal") return InitScheme::Normal;
  throw std::invalid_argument("unknown init scheme '" + name +
                              "' (expected kaiming, xavier or normal)");
}

const char* init_scheme_name(InitScheme s) {
  switch (s) {
    case InitScheme::Kaiming: return "kaiming";
    case InitScheme::Xavier: return "xavier";
    case InitScheme::Normal: return "normal";
  }
  return "?";
}

std::vector<std::string> TDNetConfig::default_schemes(int num_decoders) {
  static const char* cycle[3] = {"kaiming", "xavier", "normal"};
  std::vector<std::string> out;
  for (int i = 0; i < num_decoders; ++i) out.emplace_back(cycle[i % 3]);
  return out;
}

void TDNetConfig::validate() const {
  if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  if (num_decoders < 1) throw std::invalid_argument("num_decoders must be >= 1");
  if (static_cast<int>(dilation_rates.size()) != num_decoders)
    throw std::invalid_argument("dilation_rates must list one rate per decoder");
  if (static_cast<int>(init_schemes.size()) != num_decoders)
    throw std::invalid_argument("init_schemes must list one scheme per decoder");
  for (int r : dilation_rates)
    if (r < 1) throw std::invalid_argument("dilation rates must be >= 1");
  for (const auto& s : init_schemes) init_scheme_from_string(s);
  if (base_channels < 1) throw std::invalid_argument("base_channels must be >= 1");
  if (depth < 2) throw std::invalid_argument("depth must be >= 2");
  if (bottleneck_dropout_range[0] < 0.0 || bottleneck_dropout_range[1] >= 1.0 ||
      bottleneck_dropout_range[1] < bottleneck_dropout_range[0])
    throw std::invalid_argument("bottleneck_dropout_range must be a subrange of [0,1)");
}

int64_t TDNetConfig::level_channels(int level) const {
  return static_cast<int64_t>(base_channels) << level;
}

int64_t TDNetConfig::pool_factor() const { return int64_t(1) << (depth - 1); }

namespace {

double init_std(InitScheme scheme, int64_t fan_in, int64_t fan_out) {
  switch (scheme) {
    case InitScheme::Kaiming: return std::sqrt(2.0 / static_cast<double>(fan_in));
    case InitScheme::Xavier: return std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    case InitScheme::Normal: return 0.02;
  }
  return 0.02;
}

constexpr int64_t kInputChannels = 1;

const char* axis_label(int axis) {
  switch (axis) {
    case 0: return "depth";
    case 1: return "height";
    default: return "width";
  }
}

}  // namespace

detail::ConvRef TDNet::make_conv(const std::string& name, int64_t in_ch, int64_t out_ch,
                                 int ksize, InitScheme scheme, Rng& rng) {
  detail::ConvRef ref;
  const int64_t k3 = static_cast<int64_t>(ksize) * ksize * ksize;
  Param w;
  w.name = name + ".w";
  w.value = Tensor({out_ch, in_ch, ksize, ksize, ksize});
  const double stddev = init_std(scheme, in_ch * k3, out_ch * k3);
  for (int64_t i = 0; i < w.value.numel(); ++i)
    w.value[i] = static_cast<float>(rng.normal(0.0, stddev));
  w.grad = Tensor(w.value.shape());
  w.decay = true;
  ref.w = static_cast<int>(params_.size());
  params_.push_back(std::move(w));

  Param b;
  b.name = name + ".b";
  b.value = Tensor({out_ch});
  b.grad = Tensor({out_ch});
  b.decay = false;
  ref.b = static_cast<int>(params_.size());
  params_.push_back(std::move(b));
  return ref;
}

detail::BlockRef TDNet::make_block(const std::string& prefix, int64_t in_ch, int64_t out_ch,
                                   InitScheme scheme, Rng& rng) {
  detail::BlockRef ref;
  auto make_norm = [&](const std::string& name, int64_t ch) {
    detail::NormRef n;
    Param g;
    g.name = name + ".gamma";
    g.value = Tensor::full({ch}, 1.0f);
    g.grad = Tensor({ch});
    g.decay = false;
    n.gamma = static_cast<int>(params_.size());
    params_.push_back(std::move(g));
    Param be;
    be.name = name + ".beta";
    be.value = Tensor({ch});
    be.grad = Tensor({ch});
    be.decay = false;
    n.beta = static_cast<int>(params_.size());
    params_.push_back(std::move(be));
    return n;
  };
  ref.c1 = make_conv(prefix + ".conv1", in_ch, out_ch, 3, scheme, rng);
  ref.n1 = make_norm(prefix + ".norm1", out_ch);
  ref.c2 = make_conv(prefix + ".conv2", out_ch, out_ch, 3, scheme, rng);
  ref.n2 = make_norm(prefix + ".norm2", out_ch);
  return ref;
}

TDNet::TDNet(TDNetConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  for (const auto& s : cfg_.init_schemes) schemes_.push_back(init_scheme_from_string(s));

  Rng rng(Rng::derive(seed, rng_stream::kInit));
  for (int l = 0; l < cfg_.depth; ++l) {
    const int64_t in_ch = l == 0 ? kInputChannels : cfg_.level_channels(l - 1);
    enc_.push_back(
        make_block("enc" + std::to_string(l), in_ch, cfg_.level_channels(l), InitScheme::Kaiming,
                   rng));
  }
  for (int n = 0; n < cfg_.num_decoders; ++n) {
    detail::DecoderRef dec;
    const std::string dp = "dec" + std::to_string(n);
    dec.reduce.resize(static_cast<size_t>(cfg_.depth - 1));
    dec.blocks.resize(static_cast<size_t>(cfg_.depth - 1));
    for (int l = cfg_.depth - 2; l >= 0; --l) {
      const std::string lp = dp + ".l" + std::to_string(l);
      dec.reduce[static_cast<size_t>(l)] = make_conv(
          lp + ".reduce", cfg_.level_channels(l + 1), cfg_.level_channels(l), 1, schemes_[n], rng);
      dec.blocks[static_cast<size_t>(l)] =
          make_block(lp, 2 * cfg_.level_channels(l), cfg_.level_channels(l), schemes_[n], rng);
    }
    dec.head = make_conv(dp + ".head", cfg_.level_channels(0), cfg_.num_classes, 1, schemes_[n],
                         rng);
    dec_.push_back(std::move(dec));
  }
}

Tensor TDNet::block_forward(const detail::BlockRef& ref, const Tensor& x, int dilation,
                            detail::BlockCache* cache, nn::Workspace<float>& ws) const {
  const Tensor a = nn::conv3d_forward(x, params_[ref.c1.w].value, params_[ref.c1.b].value,
                                      dilation, ws);
  const Tensor b = nn::instnorm_forward(a, params_[ref.n1.gamma].value, params_[ref.n1.beta].value,
                                        cache ? &cache->in1 : nullptr);
  Tensor r1 = nn::relu_forward(b);
  const Tensor c = nn::conv3d_forward(r1, params_[ref.c2.w].value, params_[ref.c2.b].value,
                                      dilation, ws);
  const Tensor d = nn::instnorm_forward(c, params_[ref.n2.gamma].value, params_[ref.n2.beta].value,
                                        cache ? &cache->in2 : nullptr);
  Tensor out = nn::relu_forward(d);
  if (cache) {
    cache->x = x;
    cache->r1 = std::move(r1);
    cache->out = out;
  }
  return out;
}

Tensor TDNet::block_backward(const detail::BlockRef& ref, const detail::BlockCache& cache,
                             int dilation, const Tensor& gy, nn::Workspace<float>& ws) {
  Tensor g = nn::relu_backward(cache.out, gy);
  g = nn::instnorm_backward(cache.in2, params_[ref.n2.gamma].value, g, params_[ref.n2.gamma].grad,
                            params_[ref.n2.beta].grad);
  g = nn::conv3d_backward(cache.r1, params_[ref.c2.w].value, g, dilation, params_[ref.c2.w].grad,
                          params_[ref.c2.b].grad, ws);
  g = nn::relu_backward(cache.r1, g);
  g = nn::instnorm_backward(cache.in1, params_[ref.n1.gamma].value, g, params_[ref.n1.gamma].grad,
                            params_[ref.n1.beta].grad);
  return nn::conv3d_backward(cache.x, params_[ref.c1.w].value, g, dilation,
                             params_[ref.c1.w].grad, params_[ref.c1.b].grad, ws);
}

NetworkOutput TDNet::forward(const Tensor& patch, bool training, uint64_t dropout_seed,
                             Trace* trace, nn::Workspace<float>* ws) const {
  if (patch.rank() != 3) throw std::invalid_argument("input patch must be a 3D grid");
  const int64_t factor = cfg_.pool_factor();
  for (int a = 0; a < 3; ++a) {
    if (patch.dim(a) % factor != 0)
      throw std::invalid_argument(std::string("input ") + axis_label(a) + " (" +
                                  std::to_string(patch.dim(a)) + ") must be divisible by " +
                                  std::to_string(factor));
  }

  nn::Workspace<float> local_ws;
  nn::Workspace<float>& wsr = ws ? *ws : local_ws;

  Tensor x({1, patch.dim(0), patch.dim(1), patch.dim(2)});
  std::copy(patch.data(), patch.data() + patch.numel(), x.data());

  if (trace) {
    trace->enc_blocks.assign(static_cast<size_t>(cfg_.depth), {});
    trace->pool_idx.assign(static_cast<size_t>(cfg_.depth - 1), {});
    trace->decoders.assign(static_cast<size_t>(cfg_.num_decoders), {});
  }

  // encoder
  std::vector<Tensor> skips(static_cast<size_t>(cfg_.depth - 1));
  Tensor h = std::move(x);
  for (int l = 0; l < cfg_.depth; ++l) {
    detail::BlockCache* cache = trace ? &trace->enc_blocks[static_cast<size_t>(l)] : nullptr;
    Tensor out = block_forward(enc_[static_cast<size_t>(l)], h, 1, cache, wsr);
    if (l < cfg_.depth - 1) {
      skips[static_cast<size_t>(l)] = out;
      std::vector<int64_t> idx_local;
      std::vector<int64_t>& idx = trace ? trace->pool_idx[static_cast<size_t>(l)] : idx_local;
      h = nn::maxpool2_forward(out, idx);
    } else {
      h = std::move(out);
    }
  }

  NetworkOutput out;
  for (int n = 0; n < cfg_.num_decoders; ++n) {
    const detail::DecoderRef& dec = dec_[static_cast<size_t>(n)];
    const int dilation = cfg_.dilation_rates[static_cast<size_t>(n)];
    Trace::DecoderTrace* dt = trace ? &trace->decoders[static_cast<size_t>(n)] : nullptr;

    if (dt) dt->blocks.resize(static_cast<size_t>(cfg_.depth - 1));

    Tensor g = h;
    if (training && n > 0) {
      Rng rng(Rng::derive(dropout_seed, rng_stream::kDropout, static_cast<uint64_t>(n)));
      const nn::DropoutMask mask =
          nn::draw_dropout_mask(h.dim(0), cfg_.bottleneck_dropout_range[0],
                                cfg_.bottleneck_dropout_range[1], rng);
      g = nn::dropout_apply(h, mask);
      if (dt) {
        dt->dropout = mask;
        if (!mask.identity()) dt->dropped = g;
      }
    }

    for (int l = cfg_.depth - 2; l >= 0; --l) {
      const auto& red = dec.reduce[static_cast<size_t>(l)];
      g = nn::conv3d_forward(g, params_[red.w].value, params_[red.b].value, 1, wsr);
      g = nn::upsample2_forward(g);
      g = nn::concat_channels(skips[static_cast<size_t>(l)], g);
      detail::BlockCache* cache = dt ? &dt->blocks[static_cast<size_t>(l)] : nullptr;
      g = block_forward(dec.blocks[static_cast<size_t>(l)], g, dilation, cache, wsr);
    }

    Tensor logits =
        nn::conv3d_forward(g, params_[dec.head.w].value, params_[dec.head.b].value, 1, wsr);
    ProbabilityMap p;
    p.probs = nn::softmax_channels(logits);
    out.logits.push_back(std::move(logits));
    out.probs.push_back(std::move(p));
  }
  return out;
}

void TDNet::backward(const Trace& trace, const std::vector<Tensor>& grad_logits,
                     nn::Workspace<float>* ws) {
  if (static_cast<int>(grad_logits.size()) != cfg_.num_decoders)
    throw std::invalid_argument("expected one logits gradient per decoder");
  nn::Workspace<float> local_ws;
  nn::Workspace<float>& wsr = ws ? *ws : local_ws;

  const Tensor& bottleneck = trace.enc_blocks[static_cast<size_t>(cfg_.depth - 1)].out;
  Tensor g_bottleneck(bottleneck.shape());
  std::vector<Tensor> g_skips(static_cast<size_t>(cfg_.depth - 1));
  for (int l = 0; l < cfg_.depth - 1; ++l)
    g_skips[static_cast<size_t>(l)] =
        Tensor(trace.enc_blocks[static_cast<size_t>(l)].out.shape());

  for (int n = 0; n < cfg_.num_decoders; ++n) {
    const detail::DecoderRef& dec = dec_[static_cast<size_t>(n)];
    const auto& dt = trace.decoders[static_cast<size_t>(n)];
    const int dilation = cfg_.dilation_rates[static_cast<size_t>(n)];

    Tensor g = nn::conv3d_backward(dt.blocks[0].out, params_[dec.head.w].value,
                                   grad_logits[static_cast<size_t>(n)], 1,
                                   params_[dec.head.w].grad, params_[dec.head.b].grad, wsr);
    for (int l = 0; l <= cfg_.depth - 2; ++l) {
      g = block_backward(dec.blocks[static_cast<size_t>(l)], dt.blocks[static_cast<size_t>(l)],
                         dilation, g, wsr);
      auto [g_skip, g_up] = nn::split_channels(g, cfg_.level_channels(l));
      {
        Tensor& acc = g_skips[static_cast<size_t>(l)];
        for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += g_skip[i];
      }
      Tensor g_red_out = nn::upsample2_backward(g_up);
      const Tensor& red_in = l == cfg_.depth - 2
                                 ? (dt.dropout.identity() ? bottleneck : dt.dropped)
                                 : dt.blocks[static_cast<size_t>(l + 1)].out;
      const auto& red = dec.reduce[static_cast<size_t>(l)];
      g = nn::conv3d_backward(red_in, params_[red.w].value, g_red_out, 1, params_[red.w].grad,
                              params_[red.b].grad, wsr);
    }
    if (!dt.dropout.identity()) g = nn::dropout_backward(g, dt.dropout);
    for (int64_t i = 0; i < g_bottleneck.numel(); ++i) g_bottleneck[i] += g[i];
  }

  // encoder
  Tensor g = block_backward(enc_[static_cast<size_t>(cfg_.depth - 1)],
                            trace.enc_blocks[static_cast<size_t>(cfg_.depth - 1)], 1,
                            g_bottleneck, wsr);
  for (int l = cfg_.depth - 2; l >= 0; --l) {
    Tensor g_bout = nn::maxpool2_backward(g, trace.pool_idx[static_cast<size_t>(l)],
                                          trace.enc_blocks[static_cast<size_t>(l)].out.shape());
    const Tensor& skip_grad = g_skips[static_cast<size_t>(l)];
    for (int64_t i = 0; i < g_bout.numel(); ++i) g_bout[i] += skip_grad[i];
    g = block_backward(enc_[static_cast<size_t>(l)], trace.enc_blocks[static_cast<size_t>(l)], 1,
                       g_bout, wsr);
  }
}

void TDNet::zero_grads() {
  for (auto& p : params_) p.grad.fill(0.0f);
}

ParameterCensus TDNet::census() const {
  ParameterCensus c;
  auto count_conv = [&](const detail::ConvRef& ref) {
    return params_[ref.w].value.numel() + params_[ref.b].value.numel();
  };
  auto count_block = [&](const detail::BlockRef& ref) {
    return count_conv(ref.c1) + count_conv(ref.c2) + params_[ref.n1.gamma].value.numel() +
           params_[ref.n1.beta].value.numel() + params_[ref.n2.gamma].value.numel() +
           params_[ref.n2.beta].value.numel();
  };
  for (const auto& b : enc_) c.encoder += count_block(b);
  for (const auto& d : dec_) {
    int64_t n = count_conv(d.head);
    for (const auto& r : d.reduce) n += count_conv(r);
    for (const auto& b : d.blocks) n += count_block(b);
    c.decoders.push_back(n);
  }
  c.total = c.encoder;
  for (int64_t n : c.decoders) c.total += n;
  return c;
}

Tensor feature_dropout(const Tensor& features, const std::array<double, 2>& rate_range,
                       uint64_t seed) {
  Rng rng(seed);
  const nn::DropoutMask mask =
      nn::draw_dropout_mask(features.dim(0), rate_range[0], rate_range[1], rng);
  return nn::dropout_apply(features, mask);
}

}  // namespace tdnet
