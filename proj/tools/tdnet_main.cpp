#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tdnet/dataset.hpp"
#include "tdnet/inference.hpp"
#include "tdnet/metrics.hpp"
#include "tdnet/nifti.hpp"
#include "tdnet/preprocessing.hpp"
#include "tdnet/synthetic.hpp"
#include "tdnet/training.hpp"
#include "tdnet/version.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string utc_timestamp() {
  char buf[32];
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_run_record(const std::string& dir, const std::string& command,
                      const std::vector<std::string>& argv, ordered_json details) {
  ordered_json j;
  j["command"] = command;
  j["version"] = tdnet::kVersion;
  j["timestamp"] = utc_timestamp();
  j["argv"] = argv;
  j["details"] = std::move(details);
  fs::create_directories(dir);
  const fs::path p = fs::path(dir) / "run_record.json";
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

std::array<int64_t, 3> expand_triplet(std::vector<int64_t> v, const char* name) {
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() == 3) return {v[0], v[1], v[2]};
  throw std::invalid_argument(std::string(name) + " needs 1 or 3 values");
}

struct MakePhantomOpts {
  std::string out;
  int count = 0;
  uint64_t seed = 1;
  std::vector<int64_t> size = {64};
  int classes = 4;
  double noise_sigma = 0.05;
  double slice_fraction = 0.3;
};

int run_make_phantoms(const MakePhantomOpts& o, const std::vector<std::string>& argv) {
  const std::array<int64_t, 3> size = expand_triplet(o.size, "--size");
  const tdnet::DatasetManifest m = tdnet::write_phantom_dataset(
      o.out, o.count, o.seed, size, o.classes, o.noise_sigma, o.slice_fraction);

  ordered_json details;
  details["count"] = o.count;
  details["seed"] = o.seed;
  details["size"] = size;
  details["num_classes"] = o.classes;
  details["noise_sigma"] = o.noise_sigma;
  details["slice_fraction"] = o.slice_fraction;
  write_run_record(o.out, "make-phantoms", argv, std::move(details));

  int tr = 0, va = 0, te = 0;
  for (const auto& c : m.cases) {
    tr += c.split == "train";
    va += c.split == "val";
    te += c.split == "test";
  }
  std::printf("wrote %zu cases to %s (train %d / val %d / test %d)\n", m.cases.size(),
              o.out.c_str(), tr, va, te);
  return 0;
}

struct TrainOpts {
  std::string config;
  std::vector<std::string> overrides;
};

int run_train(const TrainOpts& o, const std::vector<std::string>& argv) {
  tdnet::TrainConfig cfg;
  if (!o.config.empty()) cfg = tdnet::load_train_config(o.config);
  for (const auto& ov : o.overrides) tdnet::apply_override(cfg, ov);
  cfg.validate();

  ordered_json details;
  details["config"] = ordered_json::parse(tdnet::train_config_to_json_text(cfg));
  write_run_record(cfg.output_dir, "train", argv, std::move(details));

  const tdnet::TrainResult res =
      tdnet::run_training(cfg, [](const std::string& line) { std::printf("%s\n", line.c_str()); });

  std::printf("finished %lld iterations; latest checkpoint: %s\n",
              static_cast<long long>(res.iterations), res.latest_checkpoint.c_str());
  if (!res.best_checkpoint.empty())
    std::printf("best val mean DSC %.4f at iteration %lld: %s\n", res.best_val_dsc,
                static_cast<long long>(res.best_iteration), res.best_checkpoint.c_str());
  else
    std::printf("validation split was empty; no best checkpoint\n");
  return 0;
}

struct InferOpts {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::vector<std::string> images;
  std::string out;
  std::vector<int64_t> stride;
  bool save_probs = false;
};

int run_infer(const InferOpts& o, const std::vector<std::string>& argv) {
  if (o.data.empty() == o.images.empty())
    throw std::invalid_argument("pass exactly one of --data or --image");

  const tdnet::CheckpointMeta meta = tdnet::peek_checkpoint(o.checkpoint);
  const tdnet::TrainConfig& cfg = meta.cfg;
  tdnet::TDNet net(cfg.model_config(), cfg.seed);
  tdnet::load_checkpoint(o.checkpoint, net, nullptr);

  std::array<int64_t, 3> stride{0, 0, 0};
  if (!o.stride.empty()) stride = expand_triplet(o.stride, "--stride");

  struct Job {
    std::string id;
    std::string path;
  };
  std::vector<Job> jobs;
  if (!o.data.empty()) {
    const tdnet::DatasetManifest m = tdnet::load_manifest(o.data);
    for (const auto& c : m.split(o.split)) jobs.push_back({c.id, m.resolve(c.image)});
    if (jobs.empty())
      throw std::invalid_argument("split '" + o.split + "' has no cases in " + o.data);
  } else {
    for (const auto& img : o.images) {
      std::string id = fs::path(img).filename().string();
      for (const char* suffix : {".nii.gz", ".nii", "_img"}) {
        const std::string s(suffix);
        if (id.size() > s.size() && id.compare(id.size() - s.size(), s.size(), s) == 0)
          id.resize(id.size() - s.size());
      }
      jobs.push_back({id, img});
    }
  }

  fs::create_directories(o.out);
  ordered_json details;
  details["checkpoint"] = o.checkpoint;
  details["checkpoint_iteration"] = meta.next_t;
  details["config"] = ordered_json::parse(tdnet::train_config_to_json_text(cfg));
  details["cases"] = ordered_json::array();

  for (const Job& job : jobs) {
    tdnet::Volume raw = tdnet::nifti::read_volume(job.path);
    raw.id = job.id;
    const tdnet::Volume vol = tdnet::window_and_normalize(raw, cfg.window, cfg.level);
    const tdnet::ProbabilityMap pm =
        tdnet::sliding_window_predict(net, vol, cfg.patch_size, stride);
    const tdnet::SegmentationMask pred = tdnet::argmax_to_mask(pm);
    const std::string pred_path = (fs::path(o.out) / (job.id + "_pred.nii.gz")).string();
    tdnet::nifti::write_labels(pred_path, pred.labels, vol.spacing);
    if (o.save_probs) {
      for (int c = 0; c < cfg.num_classes; ++c) {
        tdnet::Volume pv;
        pv.spacing = vol.spacing;
        pv.data = tdnet::Tensor({pm.probs.dim(1), pm.probs.dim(2), pm.probs.dim(3)});
        const int64_t vox = pv.data.numel();
        std::copy(pm.probs.data() + c * vox, pm.probs.data() + (c + 1) * vox, pv.data.data());
        tdnet::nifti::write_volume(
            (fs::path(o.out) / (job.id + "_prob_" + std::to_string(c) + ".nii.gz")).string(),
            pv);
      }
    }
    details["cases"].push_back(job.id);
    std::printf("%s -> %s\n", job.id.c_str(), pred_path.c_str());
  }
  write_run_record(o.out, "infer", argv, std::move(details));
  return 0;
}

struct EvaluateOpts {
  std::string pred;
  std::string data;
  std::string split = "test";
  std::string out;
};

int run_evaluate(const EvaluateOpts& o, const std::vector<std::string>& argv) {
  const tdnet::DatasetManifest m = tdnet::load_manifest(o.data);
  std::vector<tdnet::CaseEntry> cases;
  for (const auto& c : m.split(o.split))
    if (!c.labels.empty()) cases.push_back(c);
  if (cases.empty())
    throw std::invalid_argument("split '" + o.split + "' has no labeled cases in " + o.data);

  const std::string csv_path =
      o.out.empty() ? (fs::path(o.pred) / "metrics.csv").string() : o.out;
  if (!fs::path(csv_path).parent_path().empty())
    fs::create_directories(fs::path(csv_path).parent_path());
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write " + csv_path);
  csv << "case_id,class,dsc,asd_mm,hd95_mm,note\n";

  std::vector<std::string> failures;
  double sum_dsc = 0.0, sum_asd = 0.0, sum_hd = 0.0;
  int evaluated = 0;
  char row[256];
  for (const auto& c : cases) {
    try {
      std::array<double, 3> spacing;
      tdnet::SegmentationMask ref;
      ref.labels = tdnet::nifti::read_labels(m.resolve(c.labels), &spacing);
      ref.num_classes = m.num_classes;
      tdnet::SegmentationMask pred;
      pred.labels =
          tdnet::nifti::read_labels((fs::path(o.pred) / (c.id + "_pred.nii.gz")).string());
      pred.num_classes = m.num_classes;
      const tdnet::CaseMetrics cm =
          tdnet::evaluate_case(pred, ref, m.num_classes, spacing);
      for (const auto& pc : cm.per_class) {
        std::snprintf(row, sizeof(row), "%s,%d,%.6f,%.6f,%.6f,%s", c.id.c_str(), pc.class_id,
                      pc.dsc, pc.asd_mm, pc.hd95_mm, pc.note.c_str());
        csv << row << "\n";
      }
      std::snprintf(row, sizeof(row), "%s,avg,%.6f,%.6f,%.6f,", c.id.c_str(), cm.mean_dsc,
                    cm.mean_asd_mm, cm.mean_hd95_mm);
      csv << row << "\n";
      sum_dsc += cm.mean_dsc;
      sum_asd += cm.mean_asd_mm;
      sum_hd += cm.mean_hd95_mm;
      ++evaluated;
    } catch (const std::exception& e) {
      failures.push_back(c.id + ": " + e.what());
      std::fprintf(stderr, "WARNING: skipping case %s: %s\n", c.id.c_str(), e.what());
    }
  }
  if (evaluated > 0) {
    std::snprintf(row, sizeof(row), "all,avg,%.6f,%.6f,%.6f,", sum_dsc / evaluated,
                  sum_asd / evaluated, sum_hd / evaluated);
    csv << row << "\n";
  }
  if (!csv) throw std::runtime_error("failed writing " + csv_path);
  csv.close();

  ordered_json details;
  details["pred_dir"] = o.pred;
  details["dataset"] = o.data;
  details["split"] = o.split;
  details["csv"] = csv_path;
  details["evaluated"] = evaluated;
  details["failed_cases"] = failures;
  details["warnings"] = !failures.empty();
  write_run_record(fs::path(csv_path).parent_path().string(), "evaluate", argv,
                   std::move(details));

  if (!failures.empty())
    std::fprintf(stderr, "WARNING: %zu of %zu cases failed\n", failures.size(), cases.size());
  if (evaluated > 0)
    std::printf("evaluated %d cases; mean DSC %.4f; report: %s\n", evaluated,
                sum_dsc / evaluated, csv_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scribble-supervised volumetric segmentation"};
  app.require_subcommand(1);

  MakePhantomOpts mk;
  CLI::App* s_mk = app.add_subcommand("make-phantoms", "Generate a synthetic phantom dataset");
  s_mk->add_option("--out", mk.out, "Output dataset directory")->required();
  s_mk->add_option("--count", mk.count, "Number of cases")->required();
  s_mk->add_option("--seed", mk.seed, "Master RNG seed");
  s_mk->add_option("--size", mk.size, "Volume extent (one cubic value or D H W)")
      ->expected(1, 3);
  s_mk->add_option("--classes", mk.classes, "Classes including background");
  s_mk->add_option("--noise-sigma", mk.noise_sigma, "Gaussian intensity noise sigma");
  s_mk->add_option("--slice-fraction", mk.slice_fraction, "Fraction of slices scribbled");

  TrainOpts tr;
  CLI::App* s_tr = app.add_subcommand("train", "Train a model on a scribble dataset");
  s_tr->add_option("--config", tr.config, "JSON config file (keys mirror config fields)");
  s_tr->add_option("--set", tr.overrides, "key=value override, repeatable");

  InferOpts in;
  CLI::App* s_in = app.add_subcommand("infer", "Sliding-window prediction");
  s_in->add_option("--checkpoint", in.checkpoint, "Checkpoint file")->required();
  s_in->add_option("--data", in.data, "Dataset directory or manifest");
  s_in->add_option("--split", in.split, "Dataset split to predict");
  s_in->add_option("--image", in.images, "Standalone input volume, repeatable");
  s_in->add_option("--out", in.out, "Output directory")->required();
  s_in->add_option("--stride", in.stride, "Window stride (one value or D H W; default patch/2)")
      ->expected(1, 3);
  s_in->add_flag("--save-probs", in.save_probs, "Also write per-class probability volumes");

  EvaluateOpts ev;
  CLI::App* s_ev = app.add_subcommand("evaluate", "Compare predictions against dense labels");
  s_ev->add_option("--pred", ev.pred, "Directory with {id}_pred.nii.gz files")->required();
  s_ev->add_option("--data", ev.data, "Dataset directory or manifest")->required();
  s_ev->add_option("--split", ev.split, "Dataset split to evaluate");
  s_ev->add_option("--out", ev.out, "Metrics CSV path (default <pred>/metrics.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::vector<std::string> args(argv, argv + argc);
  try {
    if (s_mk->parsed()) return run_make_phantoms(mk, args);
    if (s_tr->parsed()) return run_train(tr, args);
    if (s_in->parsed()) return run_infer(in, args);
    if (s_ev->parsed()) return run_evaluate(ev, args);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
