#include "tdnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "tdnet/inference.hpp"
#include "tdnet/metrics.hpp"
#include "tdnet/nifti.hpp"

namespace tdnet {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  model_config().validate();
  if (alpha < 0.0) throw std::invalid_argument("alpha must be nonnegative");
  if (beta < 0.0) throw std::invalid_argument("beta must be nonnegative");
  if (affinity_norm != "l1" && affinity_norm != "frobenius")
    throw std::invalid_argument("affinity_norm must be 'l1' or 'frobenius'");
  if (!(lr0 > 0.0)) throw std::invalid_argument("lr0 must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw std::invalid_argument("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be nonnegative");
  if (!(poly_power > 0.0)) throw std::invalid_argument("poly_power must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  const int64_t factor = model_config().pool_factor();
  for (int64_t p : patch_size) {
    if (p < 1) throw std::invalid_argument("patch_size extents must be positive");
    if (p % factor != 0)
      throw std::invalid_argument("patch_size extents must be divisible by " +
                                  std::to_string(factor) + " (2^(depth-1))");
  }
  if (t_max < 1) throw std::invalid_argument("t_max must be at least 1");
  if (!(window > 0.0)) throw std::invalid_argument("window must be > 0");
  if (validation_interval < 0)
    throw std::invalid_argument("validation_interval must be nonnegative");
  if (stop_iter < 0) throw std::invalid_argument("stop_iter must be nonnegative");
  if (dataset_dir.empty()) throw std::invalid_argument("dataset_dir must be set");
  if (output_dir.empty()) throw std::invalid_argument("output_dir must be set");
}

int64_t TrainConfig::effective_validation_interval() const {
  if (validation_interval > 0) return validation_interval;
  return std::max<int64_t>(t_max / 20, 100);
}

TDNetConfig TrainConfig::model_config() const {
  TDNetConfig m;
  m.num_classes = num_classes;
  m.num_decoders = num_decoders;
  m.dilation_rates = dilation_rates;
  m.init_schemes = init_schemes.empty() ? TDNetConfig::default_schemes(num_decoders)
                                        : init_schemes;
  m.base_channels = base_channels;
  m.depth = depth;
  m.bottleneck_dropout_range = bottleneck_dropout_range;
  return m;
}

ConsistencyOptions TrainConfig::consistency_options() const {
  ConsistencyOptions opts;
  opts.uncertainty_weighting = uncertainty_weighting;
  opts.affinity_norm = affinity_norm == "frobenius" ? AffinityNorm::Frobenius : AffinityNorm::L1;
  return opts;
}

namespace {

void assign_field(TrainConfig& c, const std::string& key, const nlohmann::json& v) {
  try {
    if (key == "num_classes") {
      c.num_classes = v.get<int>();
    } else if (key == "num_decoders") {
      c.num_decoders = v.get<int>();
    } else if (key == "dilation_rates") {
      c.dilation_rates = v.get<std::vector<int>>();
    } else if (key == "init_schemes") {
      c.init_schemes = v.get<std::vector<std::string>>();
    } else if (key == "base_channels") {
      c.base_channels = v.get<int>();
    } else if (key == "depth") {
      c.depth = v.get<int>();
    } else if (key == "bottleneck_dropout_range") {
      const auto r = v.get<std::vector<double>>();
      if (r.size() != 2)
        throw std::invalid_argument("config key bottleneck_dropout_range needs 2 entries");
      c.bottleneck_dropout_range = {r[0], r[1]};
    } else if (key == "alpha") {
      c.alpha = v.get<double>();
    } else if (key == "beta") {
      c.beta = v.get<double>();
    } else if (key == "uncertainty_weighting") {
      c.uncertainty_weighting = v.get<bool>();
    } else if (key == "affinity_norm") {
      c.affinity_norm = v.get<std::string>();
    } else if (key == "lr0") {
      c.lr0 = v.get<double>();
    } else if (key == "momentum") {
      c.momentum = v.get<double>();
    } else if (key == "weight_decay") {
      c.weight_decay = v.get<double>();
    } else if (key == "poly_power") {
      c.poly_power = v.get<double>();
    } else if (key == "batch_size") {
      c.batch_size = v.get<int>();
    } else if (key == "patch_size") {
      const auto p = v.get<std::vector<int64_t>>();
      if (p.size() != 3) throw std::invalid_argument("config key patch_size needs 3 entries");
      c.patch_size = {p[0], p[1], p[2]};
    } else if (key == "t_max") {
      c.t_max = v.get<int64_t>();
    } else if (key == "dataset_dir") {
      c.dataset_dir = v.get<std::string>();
    } else if (key == "window") {
      c.window = v.get<double>();
    } else if (key == "level") {
      c.level = v.get<double>();
    } else if (key == "output_dir") {
      c.output_dir = v.get<std::string>();
    } else if (key == "seed") {
      c.seed = v.get<uint64_t>();
    } else if (key == "validation_interval") {
      c.validation_interval = v.get<int64_t>();
    } else if (key == "resume") {
      c.resume = v.get<std::string>();
    } else if (key == "stop_iter") {
      c.stop_iter = v.get<int64_t>();
    } else {
      throw std::invalid_argument("unknown config key: " + key);
    }
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument("config key " + key + " has the wrong type");
  }
}

}  // namespace

TrainConfig train_config_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  TrainConfig cfg;
  for (const auto& [key, value] : j.items()) assign_field(cfg, key, value);
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return train_config_from_json_text(ss.str());
}

std::string train_config_to_json_text(const TrainConfig& c) {
  ordered_json j;
  j["num_classes"] = c.num_classes;
  j["num_decoders"] = c.num_decoders;
  j["dilation_rates"] = c.dilation_rates;
  j["init_schemes"] = c.init_schemes;
  j["base_channels"] = c.base_channels;
  j["depth"] = c.depth;
  j["bottleneck_dropout_range"] = c.bottleneck_dropout_range;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["uncertainty_weighting"] = c.uncertainty_weighting;
  j["affinity_norm"] = c.affinity_norm;
  j["lr0"] = c.lr0;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["poly_power"] = c.poly_power;
  j["batch_size"] = c.batch_size;
  j["patch_size"] = c.patch_size;
  j["t_max"] = c.t_max;
  j["dataset_dir"] = c.dataset_dir;
  j["window"] = c.window;
  j["level"] = c.level;
  j["output_dir"] = c.output_dir;
  j["seed"] = c.seed;
  j["validation_interval"] = c.validation_interval;
  j["resume"] = c.resume;
  j["stop_iter"] = c.stop_iter;
  return j.dump(2);
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = text;  // bare strings like affinity_norm=l1
  assign_field(cfg, key, value);
}

// ---------------------------------------------------------------------------
// Schedules and optimizer

double poly_lr(double lr0, int64_t t, int64_t t_max, double power) {
  if (t_max < 1) throw std::invalid_argument("t_max must be at least 1");
  const double frac = std::clamp(static_cast<double>(t) / static_cast<double>(t_max), 0.0, 1.0);
  return lr0 * std::pow(1.0 - frac, power);
}

void SgdOptimizer::step(std::vector<Param>& params, double lr) {
  if (vel_.empty()) {
    vel_.reserve(params.size());
    for (const Param& p : params) vel_.emplace_back(p.value.shape());
  }
  if (vel_.size() != params.size())
    throw std::logic_error("optimizer state does not match the parameter list");
  const float m = static_cast<float>(momentum_);
  const float wd = static_cast<float>(weight_decay_);
  const float flr = static_cast<float>(lr);
  for (size_t i = 0; i < params.size(); ++i) {
    Param& p = params[i];
    if (!vel_[i].same_shape(p.value))
      throw std::logic_error("optimizer state shape mismatch on " + p.name);
    float* v = vel_[i].data();
    float* x = p.value.data();
    const float* g = p.grad.numel() == p.value.numel() ? p.grad.data() : nullptr;
    const int64_t n = p.value.numel();
    const float pwd = p.decay ? wd : 0.0f;
    for (int64_t k = 0; k < n; ++k) {
      const float grad = (g ? g[k] : 0.0f) + pwd * x[k];
      v[k] = m * v[k] + grad;
    }
    if (lr != 0.0)
      for (int64_t k = 0; k < n; ++k) x[k] -= flr * v[k];
  }
}

// ---------------------------------------------------------------------------
// One step

TrainStepResult train_step(TDNet& net, SgdOptimizer& opt, const std::vector<PatchPair>& batch,
                           int64_t t, const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("train_step needs a nonempty batch");
  LossWeights lw;
  lw.alpha = cfg.alpha;
  lw.beta = cfg.beta;
  lw.t = t;
  lw.t_max = cfg.t_max;
  const ConsistencyOptions opts = cfg.consistency_options();

  net.zero_grads();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  TrainStepResult out;
  nn::Workspace<float> ws;
  for (size_t b = 0; b < batch.size(); ++b) {
    const PatchPair& pair = batch[b];
    Trace trace;
    const uint64_t dropout_seed = Rng::derive(
        cfg.seed, rng_stream::kDropout,
        static_cast<uint64_t>(t) * static_cast<uint64_t>(batch.size()) + b);
    NetworkOutput fwd = net.forward(pair.image.data, true, dropout_seed, &trace, &ws);

    std::vector<Tensor> grad_logits(fwd.probs.size());
    const LossBreakdown lb = total_loss(fwd.probs, pair.scribble, lw, opts, &grad_logits);
    if (!std::isfinite(lb.total)) {
      char msg[256];
      std::snprintf(msg, sizeof(msg),
                    "non-finite loss at iteration %lld on case %s: total=%g sup=%g uspc=%g "
                    "mpcc=%g",
                    static_cast<long long>(t), pair.image.id.c_str(), lb.total, lb.sup, lb.uspc,
                    lb.mpcc);
      throw std::runtime_error(msg);
    }

    grad_logits.resize(fwd.logits.size());
    for (size_t n = 0; n < grad_logits.size(); ++n) {
      if (grad_logits[n].numel() == 0) grad_logits[n] = Tensor(fwd.logits[n].shape());
      if (inv_b != 1.0)
        for (int64_t k = 0; k < grad_logits[n].numel(); ++k)
          grad_logits[n].data()[k] *= static_cast<float>(inv_b);
    }
    net.backward(trace, grad_logits, &ws);

    out.loss.total += lb.total * inv_b;
    out.loss.sup += lb.sup * inv_b;
    out.loss.uspc += lb.uspc * inv_b;
    out.loss.mpcc += lb.mpcc * inv_b;
    out.loss.alpha_t = lb.alpha_t;
    out.loss.beta_t = lb.beta_t;
  }
  out.lr = poly_lr(cfg.lr0, t, cfg.t_max, cfg.poly_power);
  opt.step(net.params(), out.lr);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCkptMagic[8] = {'T', 'D', 'N', 'E', 'T', 'C', 'K', '1'};
constexpr uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("truncated checkpoint " + path);
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, const std::string& path) {
  const uint32_t n = read_pod<uint32_t>(is, path);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("truncated checkpoint " + path);
  return s;
}

struct CkptHeader {
  CheckpointMeta meta;
  uint64_t nparams = 0;
};

CkptHeader read_header(std::istream& is, const std::string& path) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error(path + " is not a checkpoint file");
  const uint32_t version = read_pod<uint32_t>(is, path);
  if (version != kCkptVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                             " in " + path);
  CkptHeader h;
  h.meta.cfg = train_config_from_json_text(read_string(is, path));
  h.meta.next_t = read_pod<int64_t>(is, path);
  h.meta.best_dsc = read_pod<double>(is, path);
  h.meta.best_iter = read_pod<int64_t>(is, path);
  h.nparams = read_pod<uint64_t>(is, path);
  return h;
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainConfig& cfg, const TDNet& net,
                     const SgdOptimizer& opt, int64_t next_t, double best_dsc,
                     int64_t best_iter) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp);
    os.write(kCkptMagic, 8);
    write_pod<uint32_t>(os, kCkptVersion);
    write_string(os, train_config_to_json_text(cfg));
    write_pod<int64_t>(os, next_t);
    write_pod<double>(os, best_dsc);
    write_pod<int64_t>(os, best_iter);

    const auto& params = net.params();
    write_pod<uint64_t>(os, params.size());
    for (const Param& p : params) {
      write_string(os, p.name);
      write_pod<uint8_t>(os, p.decay ? 1 : 0);
      write_pod<uint32_t>(os, static_cast<uint32_t>(p.value.rank()));
      for (int64_t a = 0; a < p.value.rank(); ++a) write_pod<int64_t>(os, p.value.dim(a));
      os.write(reinterpret_cast<const char*>(p.value.data()),
               static_cast<std::streamsize>(p.value.numel() * sizeof(float)));
    }
    const auto& vel = opt.velocity();
    write_pod<uint8_t>(os, vel.size() == params.size() ? 1 : 0);
    if (vel.size() == params.size())
      for (const Tensor& v : vel)
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.numel() * sizeof(float)));
    if (!os) throw std::runtime_error("failed writing checkpoint " + tmp);
  }
  fs::rename(tmp, path);
}

CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  return read_header(is, path).meta;
}

CheckpointMeta load_checkpoint(const std::string& path, TDNet& net, SgdOptimizer* opt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  const CkptHeader h = read_header(is, path);

  auto& params = net.params();
  if (h.nparams != params.size())
    throw std::runtime_error("checkpoint layout mismatch: " + std::to_string(h.nparams) +
                             " stored parameters, network has " + std::to_string(params.size()));
  for (Param& p : params) {
    const std::string name = read_string(is, path);
    if (name != p.name)
      throw std::runtime_error("checkpoint layout mismatch at parameter " + p.name +
                               " (stored: " + name + ")");
    read_pod<uint8_t>(is, path);
    const uint32_t rank = read_pod<uint32_t>(is, path);
    std::vector<int64_t> dims(rank);
    for (auto& d : dims) d = read_pod<int64_t>(is, path);
    if (rank != static_cast<uint32_t>(p.value.rank()) ||
        !std::equal(dims.begin(), dims.end(), p.value.shape().begin()))
      throw std::runtime_error("checkpoint shape mismatch at parameter " + p.name);
    is.read(reinterpret_cast<char*>(p.value.data()),
            static_cast<std::streamsize>(p.value.numel() * sizeof(float)));
    if (!is) throw std::runtime_error("truncated checkpoint " + path);
  }
  const uint8_t has_vel = read_pod<uint8_t>(is, path);
  if (has_vel && opt) {
    auto& vel = opt->velocity();
    vel.clear();
    vel.reserve(params.size());
    for (const Param& p : params) {
      Tensor v(p.value.shape());
      is.read(reinterpret_cast<char*>(v.data()),
              static_cast<std::streamsize>(v.numel() * sizeof(float)));
      if (!is) throw std::runtime_error("truncated checkpoint " + path);
      vel.push_back(std::move(v));
    }
  }
  return h.meta;
}

// ---------------------------------------------------------------------------
// Full loop

namespace {

struct LoadedCase {
  std::string id;
  Volume image;  // normalized
  ScribbleAnnotation scribble;
  SegmentationMask labels;
  bool has_labels = false;
};

LoadedCase load_case(const DatasetManifest& m, const CaseEntry& e, const TrainConfig& cfg,
                     bool need_scribbles, bool need_labels) {
  LoadedCase c;
  c.id = e.id;
  Volume raw = nifti::read_volume(m.resolve(e.image));
  raw.id = e.id;
  c.image = window_and_normalize(raw, cfg.window, cfg.level);
  if (need_scribbles) {
    if (e.scribbles.empty())
      throw std::runtime_error("training case " + e.id + " has no scribble annotation");
    c.scribble.labels = nifti::read_labels(m.resolve(e.scribbles));
    c.scribble.num_classes = m.num_classes;
    validate_scribble(c.scribble);
    if (c.scribble.labels.shape() != c.image.data.shape())
      throw std::runtime_error("case " + e.id + ": scribble shape differs from the image");
  }
  if (need_labels && !e.labels.empty()) {
    c.labels.labels = nifti::read_labels(m.resolve(e.labels));
    c.labels.num_classes = m.num_classes;
    if (c.labels.labels.shape() != c.image.data.shape())
      throw std::runtime_error("case " + e.id + ": labels shape differs from the image");
    c.has_labels = true;
  }
  return c;
}

// Keeps rows up to and including keep_iter; starts the file when missing.
void prepare_log(const std::string& path, const std::string& header, int64_t keep_iter) {
  std::vector<std::string> kept;
  {
    std::ifstream in(path);
    if (in) {
      std::string line;
      bool first = true;
      while (std::getline(in, line)) {
        if (first) {
          first = false;
          continue;
        }
        if (line.empty()) continue;
        const int64_t iter = std::strtoll(line.c_str(), nullptr, 10);
        if (iter <= keep_iter) kept.push_back(line);
      }
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write log " + path);
  out << header << "\n";
  for (const auto& line : kept) out << line << "\n";
}

double validation_mean_dsc(const TDNet& net, const std::vector<LoadedCase>& val,
                           const TrainConfig& cfg) {
  double sum = 0.0;
  for (const LoadedCase& c : val) {
    const ProbabilityMap pm =
        sliding_window_predict(net, c.image, cfg.patch_size, cfg.patch_size);
    const SegmentationMask pred = argmax_to_mask(pm);
    double case_sum = 0.0;
    for (int cls = 1; cls < cfg.num_classes; ++cls)
      case_sum += dice_score(pred, c.labels, cls);
    sum += case_sum / static_cast<double>(cfg.num_classes - 1);
  }
  return sum / static_cast<double>(val.size());
}

}  // namespace

TrainResult run_training(const TrainConfig& cfg,
                         const std::function<void(const std::string&)>& progress) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);

  const DatasetManifest manifest = load_manifest(cfg.dataset_dir);
  if (manifest.num_classes != cfg.num_classes)
    throw std::invalid_argument("num_classes (" + std::to_string(cfg.num_classes) +
                                ") does not match the dataset manifest (" +
                                std::to_string(manifest.num_classes) + ")");
  const auto train_entries = manifest.split("train");
  if (train_entries.empty())
    throw std::invalid_argument("dataset_dir has no cases in the train split");

  std::vector<LoadedCase> train_cases;
  train_cases.reserve(train_entries.size());
  for (const auto& e : train_entries) train_cases.push_back(load_case(manifest, e, cfg, true, false));

  std::vector<LoadedCase> val_cases;
  for (const auto& e : manifest.split("val")) {
    LoadedCase c = load_case(manifest, e, cfg, false, true);
    if (c.has_labels) val_cases.push_back(std::move(c));
  }

  TDNet net(cfg.model_config(), cfg.seed);
  SgdOptimizer opt(cfg.momentum, cfg.weight_decay);

  int64_t t0 = 0;
  double best_dsc = -1.0;
  int64_t best_iter = -1;
  if (!cfg.resume.empty()) {
    const CheckpointMeta meta = load_checkpoint(cfg.resume, net, &opt);
    t0 = meta.next_t;
    best_dsc = meta.best_dsc;
    best_iter = meta.best_iter;
    if (t0 > cfg.t_max)
      throw std::invalid_argument("resume checkpoint is at iteration " + std::to_string(t0) +
                                  ", beyond t_max " + std::to_string(cfg.t_max));
  }

  const std::string train_log = (fs::path(cfg.output_dir) / "train_log.csv").string();
  const std::string val_log = (fs::path(cfg.output_dir) / "val_log.csv").string();
  prepare_log(train_log, "iter,L_total,L_sup,L_uspc,L_mpcc,alpha_t,beta_t,lr", t0);
  prepare_log(val_log, "iter,mean_dsc", t0);
  std::ofstream tlog(train_log, std::ios::app);
  std::ofstream vlog(val_log, std::ios::app);

  TrainResult result;
  result.latest_checkpoint = (fs::path(cfg.output_dir) / "latest.ckpt").string();
  result.best_checkpoint = (fs::path(cfg.output_dir) / "best.ckpt").string();
  const int64_t interval = cfg.effective_validation_interval();
  const uint64_t bsz = static_cast<uint64_t>(cfg.batch_size);
  const int64_t t_end = cfg.stop_iter > 0 ? std::min(cfg.stop_iter, cfg.t_max) : cfg.t_max;

  for (int64_t t = t0; t < t_end; ++t) {
    std::vector<PatchPair> batch;
    batch.reserve(bsz);
    for (uint64_t b = 0; b < bsz; ++b) {
      const uint64_t step = static_cast<uint64_t>(t) * bsz + b;
      Rng pick(Rng::derive(cfg.seed, rng_stream::kCasePick, step));
      const int64_t idx = pick.uniform_int(0, static_cast<int64_t>(train_cases.size()) - 1);
      Rng prng(Rng::derive(cfg.seed, rng_stream::kPatchOrigin, step));
      const LoadedCase& c = train_cases[static_cast<size_t>(idx)];
      batch.push_back(extract_random_patch(c.image, c.scribble, cfg.patch_size, prng));
    }

    const TrainStepResult step = train_step(net, opt, batch, t, cfg);

    char row[256];
    std::snprintf(row, sizeof(row), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                  static_cast<long long>(t + 1), step.loss.total, step.loss.sup, step.loss.uspc,
                  step.loss.mpcc, step.loss.alpha_t, step.loss.beta_t, step.lr);
    tlog << row << "\n";

    const bool boundary = (t + 1) % interval == 0 || t + 1 == t_end;
    if (!boundary) continue;

    if (!val_cases.empty()) {
      const double dsc = validation_mean_dsc(net, val_cases, cfg);
      vlog << (t + 1) << "," << dsc << "\n";
      if (dsc > best_dsc) {
        best_dsc = dsc;
        best_iter = t + 1;
        save_checkpoint(result.best_checkpoint, cfg, net, opt, t + 1, best_dsc, best_iter);
      }
      if (progress) {
        char line[160];
        std::snprintf(line, sizeof(line), "iter %lld/%lld: val mean DSC %.4f (best %.4f @ %lld)",
                      static_cast<long long>(t + 1), static_cast<long long>(cfg.t_max), dsc,
                      best_dsc, static_cast<long long>(best_iter));
        progress(line);
      }
    }
    save_checkpoint(result.latest_checkpoint, cfg, net, opt, t + 1, best_dsc, best_iter);
    tlog.flush();
    vlog.flush();
  }

  if (t0 >= t_end && !fs::exists(result.latest_checkpoint))
    save_checkpoint(result.latest_checkpoint, cfg, net, opt, t0, best_dsc, best_iter);

  result.iterations = std::max(t0, t_end);
  result.best_val_dsc = best_dsc;
  result.best_iteration = best_iter;
  if (val_cases.empty() || !fs::exists(result.best_checkpoint)) result.best_checkpoint.clear();
  if (!tlog || !vlog) throw std::runtime_error("failed writing logs under " + cfg.output_dir);
  return result;
}

}  // namespace tdnet
