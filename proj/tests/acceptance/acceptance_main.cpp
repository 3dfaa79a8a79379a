// Acceptance harness: one PASS/FAIL line per criterion on stdout, exit 0
// only when every selected criterion passes. Progress of the long-running
// experiment criterion goes to stderr.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "support/metric_oracle.hpp"
#include "support/testutil.hpp"
#include "tdnet/dataset.hpp"
#include "tdnet/inference.hpp"
#include "tdnet/losses.hpp"
#include "tdnet/metrics.hpp"
#include "tdnet/network.hpp"
#include "tdnet/nifti.hpp"
#include "tdnet/rng.hpp"
#include "tdnet/synthetic.hpp"
#include "tdnet/training.hpp"

namespace {

using tdnet::ByteGrid;
using tdnet::ProbMapT;
using tdnet::ScribbleAnnotation;
using tdnet::SegmentationMask;
using tdnet::Tensor;
using tdnet::TensorT;
using tdnet::Volume;

namespace fs = std::filesystem;

struct Outcome {
  bool ok = true;
  std::string detail;
};

/// First failure wins; later expectations still run so the detail can count.
struct Checks {
  bool ok = true;
  int passed = 0;
  std::string first_fail;

  void expect(bool cond, const std::string& what) {
    if (cond) {
      ++passed;
      return;
    }
    if (ok) first_fail = what;
    ok = false;
  }
};

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

ProbMapT<double> voxel_map(const std::vector<double>& p) {
  ProbMapT<double> out;
  out.probs = TensorT<double>({static_cast<int64_t>(p.size()), 1, 1, 1});
  for (size_t i = 0; i < p.size(); ++i) out.probs[static_cast<int64_t>(i)] = p[i];
  return out;
}

ScribbleAnnotation random_scribble(int64_t d, int64_t h, int64_t w, int num_classes,
                                   tdnet::Rng& rng, double labeled_fraction) {
  ScribbleAnnotation s;
  s.labels = ByteGrid({d, h, w});
  s.labels.fill(tdnet::kIgnoreLabel);
  s.num_classes = num_classes;
  for (int64_t i = 0; i < s.labels.numel(); ++i)
    if (rng.uniform() < labeled_fraction)
      s.labels[i] = static_cast<uint8_t>(rng.uniform_int(0, num_classes - 1));
  if (std::all_of(s.labels.data(), s.labels.data() + s.labels.numel(),
                  [](uint8_t v) { return v == tdnet::kIgnoreLabel; }))
    s.labels[0] = 0;
  return s;
}

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args, const std::string& log_path) {
  const std::string cmd = std::string(TDNET_CLI_PATH) + " " + args + " > " + log_path + " 2>&1";
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(log_path);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

// ---------------------------------------------------------------------------
// 1. Loss unit suite: worked example values to 1e-6.

Outcome criterion_losses() {
  using namespace tdnet;
  Checks c;
  double worst = 0.0;
  auto near = [&](double got, double want, const std::string& what) {
    worst = std::max(worst, std::abs(got - want));
    c.expect(std::abs(got - want) <= 1e-6,
             what + " = " + format_double(got) + ", expected " + format_double(want));
  };

  {
    std::vector<ProbMapT<double>> probs{voxel_map({0.5, 0.5})};
    ScribbleAnnotation s;
    s.labels = ByteGrid({1, 1, 1});
    s.labels[0] = 0;
    s.num_classes = 2;
    near(partial_cross_entropy(probs, s), 0.69314718055994529, "pce at p=0.5");
    s.labels[0] = kIgnoreLabel;
    near(partial_cross_entropy(probs, s), 0.0, "pce with no labeled voxels");
  }
  near(uncertainty_weights(voxel_map({0.6, 0.4})).weights[0], 0.51016980025031633,
       "weight(0.6,0.4)");
  {
    std::vector<ProbMapT<double>> probs{voxel_map({0.8, 0.2}), voxel_map({0.6, 0.4}),
                                        voxel_map({0.4, 0.6})};
    const ProbMapT<double> pbar = mix_soft_pseudo_label(probs);
    near(uspc_loss(probs, pbar, uncertainty_weights(pbar)), 0.057536414490356208,
         "uspc worked example");
    std::vector<ProbMapT<double>> same(3, voxel_map({0.7, 0.3}));
    const ProbMapT<double> pbar2 = mix_soft_pseudo_label(same);
    c.expect(std::abs(uspc_loss(same, pbar2, uncertainty_weights(pbar2))) <= 1e-12,
             "uspc of identical branches must vanish");
  }
  {
    std::vector<ProbMapT<double>> probs{voxel_map({0.6, 0.4}), voxel_map({0.5, 0.5}),
                                        voxel_map({0.5, 0.5})};
    near(mpcc_loss(probs), 0.0089360750842267262, "mpcc worked example");
    std::vector<ProbMapT<double>> same(3, voxel_map({0.6, 0.4}));
    c.expect(std::abs(mpcc_loss(same)) <= 1e-12, "mpcc of identical branches must vanish");
  }
  near(rampup_weight(10.0, 0, 100), 0.067379469990854673, "rampup at t=0");
  near(rampup_weight(10.0, 50, 100), 2.865047968601901, "rampup at t_max/2");
  near(rampup_weight(10.0, 100, 100), 10.0, "rampup at t_max");

  {
    tdnet::Rng rng(31);
    auto logits = testutil::random_logits(3, 3, 2, 3, 2, rng, 1.5);
    auto probs = testutil::to_probs(logits);
    ScribbleAnnotation s = random_scribble(2, 3, 2, 3, rng, 0.5);
    LossWeights lw;
    lw.t = 25;
    lw.t_max = 100;
    const LossBreakdown lb = total_loss(probs, s, lw);
    const double recombined = lb.sup + lb.alpha_t * lb.uspc + lb.beta_t * lb.mpcc;
    c.expect(std::abs(lb.total - recombined) <= 1e-12, "total must equal its breakdown");
    std::vector<ProbMapT<double>> solo{probs[0]};
    const LossBreakdown single = total_loss(solo, s, lw);
    c.expect(single.uspc == 0.0 && single.mpcc == 0.0,
             "single decoder must zero both consistency terms");
  }

  Outcome out;
  out.ok = c.ok;
  out.detail = c.ok ? std::to_string(c.passed) + " example values within 1e-6 (worst |err| " +
                          format_double(worst) + ")"
                    : c.first_fail;
  return out;
}

// ---------------------------------------------------------------------------
// 2. Analytic gradients against central finite differences.

Outcome criterion_gradients() {
  using namespace tdnet;
  tdnet::Rng rng(401);
  double worst_pce = 0.0, worst_uspc = 0.0, worst_mpcc = 0.0;
  int instances = 0;
  for (int trial = 0; trial < 8; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(0, 1));
    const int64_t cn = rng.uniform_int(2, 3), d = rng.uniform_int(1, 4);
    const int64_t h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
    auto logits = testutil::random_logits(n, cn, d, h, w, rng, 1.5);
    auto probs = testutil::to_probs(logits);
    ScribbleAnnotation s = random_scribble(d, h, w, static_cast<int>(cn), rng, 0.5);

    {
      std::vector<TensorT<double>> grads(static_cast<size_t>(n));
      partial_cross_entropy(probs, s, &grads);
      worst_pce = std::max(worst_pce,
                           testutil::fd_max_rel_error(
                               logits, [&](const auto& p) { return partial_cross_entropy(p, s); },
                               grads));
      ++instances;
    }
    {
      const ProbMapT<double> pbar = mix_soft_pseudo_label(probs);
      const UncertaintyWeightsT<double> wts = uncertainty_weights(pbar);
      std::vector<TensorT<double>> grads(static_cast<size_t>(n));
      uspc_loss(probs, pbar, wts, &grads);
      worst_uspc = std::max(worst_uspc,
                            testutil::fd_max_rel_error(
                                logits, [&](const auto& p) { return uspc_loss(p, pbar, wts); },
                                grads));
      ++instances;
    }
    {
      // With L1 normalization the averaged-affinity pathway contributes a
      // constant direction that the normalization pullback annihilates, so
      // finite differences of the full loss match the stopped gradient.
      std::vector<TensorT<double>> grads(static_cast<size_t>(n));
      mpcc_loss(probs, AffinityNorm::L1, &grads);
      worst_mpcc = std::max(
          worst_mpcc,
          testutil::fd_max_rel_error(logits, [&](const auto& p) { return mpcc_loss(p); }, grads));
      ++instances;
    }
  }

  const double worst = std::max({worst_pce, worst_uspc, worst_mpcc});
  Outcome out;
  out.ok = instances >= 20 && worst < 1e-4;
  out.detail = std::to_string(instances) + " instances, max rel err " + format_double(worst) +
               " (pce " + format_double(worst_pce) + ", uspc " + format_double(worst_uspc) +
               ", mpcc " + format_double(worst_mpcc) + ")";
  return out;
}

// ---------------------------------------------------------------------------
// 3. Metric equivalence against the brute-force all-pairs oracle.

Outcome criterion_metric_oracle() {
  using namespace tdnet;
  tdnet::Rng rng(402);
  Checks c;
  int nontrivial = 0;
  for (int trial = 0; trial < 200 && c.ok; ++trial) {
    const int64_t d = rng.uniform_int(2, 8), h = rng.uniform_int(2, 8), w = rng.uniform_int(2, 8);
    const std::array<double, 3> spacing = {rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0),
                                           rng.uniform(0.5, 3.0)};
    SegmentationMask a, b;
    a.labels = ByteGrid({d, h, w});
    b.labels = ByteGrid({d, h, w});
    a.num_classes = b.num_classes = 2;
    const double fa = rng.uniform(0.05, 0.6), fb = rng.uniform(0.05, 0.6);
    for (int64_t i = 0; i < a.labels.numel(); ++i) {
      a.labels[i] = rng.uniform() < fa ? 1 : 0;
      b.labels[i] = rng.uniform() < fb ? 1 : 0;
    }

    const metric_oracle::Result want = metric_oracle::evaluate(a.labels, b.labels, 1, spacing);
    const double dsc = dice_score(a, b, 1);
    const SurfaceDistances sd = surface_metrics(a, b, 1, spacing);
    c.expect(dsc == want.dsc, "dice mismatch on trial " + std::to_string(trial));
    c.expect(sd.asd_mm == want.asd && sd.hd95_mm == want.hd95,
             "surface distance mismatch on trial " + std::to_string(trial) + ": asd " +
                 format_double(sd.asd_mm) + " vs " + format_double(want.asd) + ", hd95 " +
                 format_double(sd.hd95_mm) + " vs " + format_double(want.hd95));
    c.expect(sd.empty_pred == want.empty_a && sd.empty_ref == want.empty_b,
             "empty flags mismatch on trial " + std::to_string(trial));
    if (!want.empty_a && !want.empty_b) ++nontrivial;
  }
  c.expect(nontrivial > 100, "too few nontrivial pairs: " + std::to_string(nontrivial));

  Outcome out;
  out.ok = c.ok;
  out.detail = c.ok ? "200 random pairs agree exactly (" + std::to_string(nontrivial) +
                          " with both surfaces nonempty)"
                    : c.first_fail;
  return out;
}

// ---------------------------------------------------------------------------
// 4. Architecture invariants at the published configuration.

Outcome criterion_architecture() {
  using namespace tdnet;
  Checks c;
  TDNetConfig cfg;  // defaults: C=4, three decoders at dilations {1,3,6}
  TDNet net(cfg, 7);

  const ParameterCensus census = net.census();
  c.expect(census.decoders.size() == 3, "expected three decoders in the census");
  for (size_t n = 1; n < census.decoders.size(); ++n)
    c.expect(census.decoders[n] == census.decoders[0],
             "decoder " + std::to_string(n) + " parameter count " +
                 std::to_string(census.decoders[n]) + " != " +
                 std::to_string(census.decoders[0]));

  tdnet::Rng rng(403);
  for (const auto& size : {std::array<int64_t, 3>{32, 32, 32}, std::array<int64_t, 3>{16, 32, 48}}) {
    Tensor x({size[0], size[1], size[2]});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal(0.0, 1.0));
    const NetworkOutput out = net.forward(x, false);
    c.expect(out.logits.size() == 3 && out.probs.size() == 3, "expected three output branches");
    for (const auto& z : out.logits)
      c.expect(z.dim(0) == cfg.num_classes && z.dim(1) == size[0] && z.dim(2) == size[1] &&
                   z.dim(3) == size[2],
               "logits shape " + shape_str(z.shape()) + " does not match the input grid");
    const int64_t vox = size[0] * size[1] * size[2];
    bool simplex = true;
    for (const auto& p : out.probs) {
      for (int64_t i = 0; i < vox && simplex; ++i) {
        float sum = 0.0f;
        for (int64_t ch = 0; ch < cfg.num_classes; ++ch) sum += p.probs[ch * vox + i];
        simplex = std::abs(sum - 1.0f) <= 1e-4f;
      }
    }
    c.expect(simplex, "probabilities must sum to one per voxel");

    if (size[0] == 32) {
      const NetworkOutput again = net.forward(x, false);
      bool identical = true;
      for (size_t n = 0; n < out.probs.size() && identical; ++n)
        identical = std::memcmp(out.probs[n].probs.data(), again.probs[n].probs.data(),
                                sizeof(float) * static_cast<size_t>(out.probs[n].probs.numel())) ==
                    0;
      c.expect(identical, "repeated inference must be bitwise identical");
    }
  }

  Outcome out;
  out.ok = c.ok;
  out.detail = c.ok ? "shape preserved on 32^3 and 16x32x48, " +
                          std::to_string(census.decoders[0]) +
                          " params per decoder, inference deterministic"
                    : c.first_fail;
  return out;
}

// ---------------------------------------------------------------------------
// 5. Sliding-window exactness and exhaustive coverage.

Outcome criterion_sliding_window() {
  using namespace tdnet;
  Checks c;

  int64_t combos = 0;
  for (int64_t sd = 5; sd <= 12 && c.ok; ++sd)
    for (int64_t sh = 5; sh <= 12 && c.ok; ++sh)
      for (int64_t sw = 5; sw <= 12 && c.ok; ++sw) {
        const auto od = window_origins(sd, 4, 2);
        const auto oh = window_origins(sh, 4, 2);
        const auto ow = window_origins(sw, 4, 2);
        for (const auto* axis : {&od, &oh, &ow}) {
          c.expect(axis->front() == 0, "first origin must be 0");
          c.expect(std::is_sorted(axis->begin(), axis->end()), "origins must increase");
        }
        c.expect(od.back() == sd - 4 && oh.back() == sh - 4 && ow.back() == sw - 4,
                 "last origin must sit flush with the volume edge");
        ByteGrid covered({sd, sh, sw});
        for (int64_t z : od)
          for (int64_t y : oh)
            for (int64_t x : ow)
              for (int64_t dz = 0; dz < 4; ++dz)
                for (int64_t dy = 0; dy < 4; ++dy)
                  for (int64_t dx = 0; dx < 4; ++dx) covered.at3(z + dz, y + dy, x + dx) = 1;
        bool full = true;
        for (int64_t i = 0; i < covered.numel(); ++i) full = full && covered[i] == 1;
        c.expect(full, "uncovered voxel at volume " + std::to_string(sd) + "x" +
                           std::to_string(sh) + "x" + std::to_string(sw));
        ++combos;
      }

  TDNetConfig mc;
  mc.num_classes = 3;
  mc.num_decoders = 2;
  mc.dilation_rates = {1, 2};
  mc.init_schemes = TDNetConfig::default_schemes(2);
  mc.base_channels = 4;
  mc.depth = 3;
  TDNet net(mc, 21);
  tdnet::Rng rng(404);

  Volume v;
  v.data = Tensor({8, 8, 8});
  for (int64_t i = 0; i < v.data.numel(); ++i)
    v.data[i] = static_cast<float>(rng.uniform(0.0, 1.0));
  const ProbabilityMap whole = sliding_window_predict(net, v, {8, 8, 8}, {8, 8, 8});
  const NetworkOutput direct = net.forward(v.data, false);
  c.expect(std::memcmp(whole.probs.data(), direct.probs[0].probs.data(),
                       sizeof(float) * static_cast<size_t>(whole.probs.numel())) == 0,
           "single-window prediction must match the direct forward bitwise");

  Volume big;
  big.data = Tensor({8, 8, 12});
  for (int64_t i = 0; i < big.data.numel(); ++i)
    big.data[i] = static_cast<float>(rng.uniform(0.0, 1.0));
  const ProbabilityMap tiled = sliding_window_predict(net, big, {8, 8, 8}, {4, 4, 4});
  const int64_t vox = 8 * 8 * 12;
  bool simplex = true;
  for (int64_t i = 0; i < vox && simplex; ++i) {
    float sum = 0.0f;
    for (int64_t ch = 0; ch < 3; ++ch) sum += tiled.probs[ch * vox + i];
    simplex = std::abs(sum - 1.0f) <= 1e-4f;
  }
  c.expect(simplex, "averaged overlapping windows must stay on the simplex");

  Outcome out;
  out.ok = c.ok;
  out.detail = c.ok ? std::to_string(combos) +
                          " volume shapes fully covered, single window bitwise-exact"
                    : c.first_fail;
  return out;
}

// ---------------------------------------------------------------------------
// 6. Desk-scale experiment: ablation ordering on synthetic phantoms.

struct ArmSpec {
  const char* name;
  const char* overrides;
};

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

double parse_mean_dsc(const std::string& metrics_csv) {
  for (const std::string& line : read_lines(metrics_csv)) {
    if (line.rfind("all,avg,", 0) == 0) {
      const size_t start = std::strlen("all,avg,");
      return std::stod(line.substr(start));
    }
  }
  throw std::runtime_error("no all,avg row in " + metrics_csv);
}

Outcome criterion_experiment() {
  const testutil::TempDir tmp("tdnet_acc_exp");
  const std::string data = tmp.str("data");
  const std::string mk_args = "make-phantoms --out " + data +
                              " --count 30 --seed 77 --size 64 --classes 4"
                              " --noise-sigma 0.05 --slice-fraction 0.3";
  CliResult mk = run_cli(mk_args, tmp.str("mk.log"));
  if (mk.exit_code != 0) return {false, "make-phantoms failed: " + mk.output};

  // Patch extent matters to the dilated arm: at 24^3 a dilation-6 kernel
  // spans more than half the axis and the branch never becomes a useful
  // consistency partner. 32^3 keeps the nine runs inside the CPU budget.
  const std::string common =
      " --set dataset_dir=" + data +
      " --set num_classes=4 --set depth=4 --set base_channels=8"
      " --set patch_size=[32,32,32] --set window=1 --set level=0.5 --set batch_size=1"
      " --set t_max=2000 --set validation_interval=1000";
  const ArmSpec arms[] = {
      {"a", " --set num_decoders=1 --set dilation_rates=[1] --set alpha=0 --set beta=0"},
      {"b", " --set num_decoders=3 --set dilation_rates=[1,1,1] --set alpha=10 --set beta=0"
            " --set uncertainty_weighting=false"},
      {"c", " --set num_decoders=3 --set dilation_rates=[1,3,6] --set alpha=10 --set beta=1"
            " --set uncertainty_weighting=true"},
  };
  const uint64_t seeds[] = {101, 202, 303};

  std::vector<std::vector<double>> dsc(3);
  for (int a = 0; a < 3; ++a) {
    for (uint64_t seed : seeds) {
      const std::string run_id = std::string(arms[a].name) + "_" + std::to_string(seed);
      const std::string out_dir = tmp.str(run_id);
      std::fprintf(stderr, "  [experiment] training arm %s seed %llu...\n", arms[a].name,
                   static_cast<unsigned long long>(seed));
      CliResult tr = run_cli("train" + common + arms[a].overrides + " --set output_dir=" +
                                 out_dir + " --set seed=" + std::to_string(seed),
                             tmp.str(run_id + ".train.log"));
      if (tr.exit_code != 0)
        return {false, "training " + run_id + " failed: " +
                           tr.output.substr(tr.output.size() > 400 ? tr.output.size() - 400 : 0)};

      std::string ckpt = out_dir + "/best.ckpt";
      if (!fs::exists(ckpt)) ckpt = out_dir + "/latest.ckpt";
      const std::string pred = tmp.str(run_id + ".pred");
      CliResult inf = run_cli("infer --checkpoint " + ckpt + " --data " + data +
                                  " --split test --out " + pred + " --stride 32",
                              tmp.str(run_id + ".infer.log"));
      if (inf.exit_code != 0) return {false, "inference " + run_id + " failed: " + inf.output};
      CliResult ev = run_cli("evaluate --pred " + pred + " --data " + data + " --split test",
                             tmp.str(run_id + ".eval.log"));
      if (ev.exit_code != 0) return {false, "evaluation " + run_id + " failed: " + ev.output};

      const double mean_dsc = parse_mean_dsc(pred + "/metrics.csv");
      std::fprintf(stderr, "  [experiment] arm %s seed %llu: test mean DSC %.4f\n", arms[a].name,
                   static_cast<unsigned long long>(seed), mean_dsc);
      dsc[static_cast<size_t>(a)].push_back(mean_dsc);
    }
  }

  const double med_a = median3(dsc[0]), med_b = median3(dsc[1]), med_c = median3(dsc[2]);
  Checks c;
  c.expect(med_c >= med_b, "full model must not trail the unweighted-consistency arm");
  c.expect(med_b >= med_a, "consistency arm must not trail the pCE-only arm");
  c.expect(med_c - med_a >= 0.03, "full model must beat pCE-only by at least 0.03 DSC");
  c.expect(med_c >= 0.70, "full model must reach 0.70 test mean DSC");

  Outcome out;
  out.ok = c.ok;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "median test mean DSC: pCE %.4f, +consistency %.4f, full %.4f",
                med_a, med_b, med_c);
  out.detail = c.ok ? buf : c.first_fail + " (" + buf + ")";
  return out;
}

// ---------------------------------------------------------------------------
// 7. Schedules and the pause/resume loss trace.

Outcome criterion_schedules() {
  using namespace tdnet;
  Checks c;

  c.expect(poly_lr(0.01, 0, 30000) == 0.01, "poly LR must start at lr0");
  c.expect(poly_lr(0.01, 30000, 30000) == 0.0, "poly LR must end at 0");
  for (const int64_t t_max : {int64_t{7}, int64_t{100}, int64_t{60000}}) {
    double prev_lr = poly_lr(0.01, 0, t_max);
    double prev_a = rampup_weight(10.0, 0, t_max);
    double prev_b = rampup_weight(1.0, 0, t_max);
    bool lr_down = true, a_up = true, b_up = true;
    const int64_t step = std::max<int64_t>(1, t_max / 50);
    for (int64_t t = step; t <= t_max; t += step) {
      const double lr = poly_lr(0.01, t, t_max);
      const double at = rampup_weight(10.0, t, t_max);
      const double bt = rampup_weight(1.0, t, t_max);
      lr_down = lr_down && lr < prev_lr;
      a_up = a_up && at >= prev_a;
      b_up = b_up && bt >= prev_b;
      prev_lr = lr;
      prev_a = at;
      prev_b = bt;
    }
    c.expect(lr_down, "poly LR must strictly decrease (t_max " + std::to_string(t_max) + ")");
    c.expect(a_up && b_up,
             "ramp-up weights must be non-decreasing (t_max " + std::to_string(t_max) + ")");
    c.expect(rampup_weight(10.0, t_max, t_max) == 10.0, "ramp-up must reach its base weight");
  }

  const testutil::TempDir tmp("tdnet_acc_sched");
  write_phantom_dataset(tmp.str("data"), 4, 31, {24, 24, 24}, 3, 0.02);
  TrainConfig cfg;
  cfg.num_classes = 3;
  cfg.num_decoders = 2;
  cfg.dilation_rates = {1, 2};
  cfg.base_channels = 4;
  cfg.depth = 3;
  cfg.patch_size = {16, 16, 16};
  cfg.window = 1.0;
  cfg.level = 0.5;
  cfg.dataset_dir = tmp.str("data");
  cfg.t_max = 6;
  cfg.validation_interval = 3;
  cfg.seed = 13;

  TrainConfig straight = cfg;
  straight.output_dir = tmp.str("straight");
  run_training(straight);

  TrainConfig paused = cfg;
  paused.output_dir = tmp.str("paused");
  paused.stop_iter = 3;
  run_training(paused);
  TrainConfig resumed = paused;
  resumed.stop_iter = 0;
  resumed.resume = tmp.str("paused") + "/latest.ckpt";
  run_training(resumed);

  const auto lines_a = read_lines(tmp.str("straight") + "/train_log.csv");
  const auto lines_b = read_lines(tmp.str("paused") + "/train_log.csv");
  c.expect(lines_a.size() == 7, "expected a 6-iteration trace plus header");
  c.expect(lines_a == lines_b, "pause/resume trace must match the uninterrupted trace");

  Outcome out;
  out.ok = c.ok;
  out.detail = c.ok ? "poly endpoints exact, ramp-up monotone, 6-iteration trace identical "
                      "across pause/resume"
                    : c.first_fail;
  return out;
}

// ---------------------------------------------------------------------------
// 8. Degenerate configurations reduce to their documented baselines.

struct LogRow {
  int64_t iter = 0;
  double total = 0.0, sup = 0.0, uspc = 0.0, mpcc = 0.0, alpha_t = 0.0, beta_t = 0.0, lr = 0.0;
};

std::vector<LogRow> parse_log(const std::string& path) {
  std::vector<LogRow> rows;
  for (const std::string& line : read_lines(path)) {
    LogRow r;
    long long iter = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &iter, &r.total, &r.sup,
                    &r.uspc, &r.mpcc, &r.alpha_t, &r.beta_t, &r.lr) == 8) {
      r.iter = iter;
      rows.push_back(r);
    }
  }
  return rows;
}

Outcome criterion_degenerate() {
  using namespace tdnet;
  Checks c;
  const testutil::TempDir tmp("tdnet_acc_degen");
  write_phantom_dataset(tmp.str("data"), 4, 37, {24, 24, 24}, 3, 0.02);

  TrainConfig base;
  base.num_classes = 3;
  base.num_decoders = 2;
  base.dilation_rates = {1, 2};
  base.base_channels = 4;
  base.depth = 3;
  base.patch_size = {16, 16, 16};
  base.window = 1.0;
  base.level = 0.5;
  base.dataset_dir = tmp.str("data");
  base.t_max = 4;
  base.validation_interval = 4;
  base.seed = 17;

  {
    TrainConfig solo = base;
    solo.num_decoders = 1;
    solo.dilation_rates = {1};
    solo.alpha = 0.0;
    solo.beta = 0.0;
    solo.bottleneck_dropout_range = {0.0, 0.0};
    solo.output_dir = tmp.str("solo");
    run_training(solo);
    const auto rows = parse_log(tmp.str("solo") + "/train_log.csv");
    c.expect(rows.size() == 4, "single-decoder run must complete every iteration");
    bool reduced = !rows.empty();
    for (const LogRow& r : rows)
      reduced = reduced && r.uspc == 0.0 && r.mpcc == 0.0 && r.total == r.sup &&
                std::isfinite(r.total);
    c.expect(reduced, "pCE-only run must reduce to the supervised term");
  }

  {
    // Blank every scribble: supervision vanishes, consistency keeps training.
    DatasetManifest m = load_manifest(tmp.str("data"));
    for (const CaseEntry& e : m.cases) {
      std::array<double, 3> spacing;
      ByteGrid s = nifti::read_labels(m.resolve(e.scribbles), &spacing);
      s.fill(kIgnoreLabel);
      nifti::write_labels(m.resolve(e.scribbles), s, spacing);
    }
    TrainConfig blank = base;
    blank.output_dir = tmp.str("blank");
    blank.alpha = 10.0;
    blank.beta = 1.0;
    run_training(blank);
    const auto rows = parse_log(tmp.str("blank") + "/train_log.csv");
    c.expect(rows.size() == 4, "scribble-free run must complete every iteration");
    bool reduced = !rows.empty();
    for (const LogRow& r : rows) {
      const double recombined = r.alpha_t * r.uspc + r.beta_t * r.mpcc;
      reduced = reduced && r.sup == 0.0 && std::isfinite(r.total) &&
                std::abs(r.total - recombined) <= 1e-7 * std::max(1.0, std::abs(r.total));
    }
    c.expect(reduced, "scribble-free run must reduce to the consistency terms");
  }

  {
    std::vector<ProbMapT<double>> probs{voxel_map({0.7, 0.3})};
    ScribbleAnnotation s;
    s.labels = ByteGrid({1, 1, 1});
    s.labels[0] = kIgnoreLabel;
    s.num_classes = 2;
    LossWeights lw;
    const LossBreakdown lb = total_loss(probs, s, lw);
    c.expect(lb.total == 0.0 && lb.sup == 0.0 && lb.uspc == 0.0 && lb.mpcc == 0.0,
             "single decoder with empty scribbles must yield exactly zero loss");
  }

  Outcome out;
  out.ok = c.ok;
  out.detail = c.ok ? "pCE-only reduces to the supervised term; scribble-free training "
                      "optimizes consistency only"
                    : c.first_fail;
  return out;
}

struct Criterion {
  const char* name;
  Outcome (*fn)();
  double time_limit_s;  // 0 = unlimited
};

const Criterion kCriteria[] = {
    {"loss unit suite", criterion_losses, 5.0},
    {"gradient checks", criterion_gradients, 60.0},
    {"metric oracle equivalence", criterion_metric_oracle, 60.0},
    {"architecture invariants", criterion_architecture, 30.0},
    {"sliding-window exactness", criterion_sliding_window, 0.0},
    {"desk-scale experiment", criterion_experiment, 14400.0},
    {"schedule and resume traces", criterion_schedules, 0.0},
    {"degenerate configurations", criterion_degenerate, 0.0},
};

}  // namespace

int main(int argc, char** argv) {
  bool selected[8];
  std::fill(std::begin(selected), std::end(selected), argc <= 1);
  for (int i = 1; i < argc; ++i) {
    const int k = std::atoi(argv[i]);
    if (k < 1 || k > 8) {
      std::fprintf(stderr, "usage: %s [criterion numbers 1-8]\n", argv[0]);
      return 2;
    }
    selected[k - 1] = true;
  }

  int failures = 0;
  for (int i = 0; i < 8; ++i) {
    if (!selected[i]) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = kCriteria[i].fn();
    } catch (const std::exception& e) {
      out.ok = false;
      out.detail = std::string("unexpected exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (out.ok && kCriteria[i].time_limit_s > 0.0 && secs > kCriteria[i].time_limit_s) {
      out.ok = false;
      out.detail = "checks passed but runtime " + format_double(secs) + " s exceeds " +
                   format_double(kCriteria[i].time_limit_s) + " s";
    }
    failures += out.ok ? 0 : 1;
    std::printf("[%d/8] %s %s (%.1f s): %s\n", i + 1, out.ok ? "PASS" : "FAIL",
                kCriteria[i].name, secs, out.detail.c_str());
    std::fflush(stdout);
  }

  const int ran = static_cast<int>(std::count(std::begin(selected), std::end(selected), true));
  std::printf("acceptance: %d/%d criteria passed\n", ran - failures, ran);
  return failures == 0 ? 0 : 1;
}
