// Command-line surface for the dent-segmentation pipeline:
// generate | ingest-noise | train | predict | evaluate | bench | render.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>

#include "dentseg/dataio.hpp"
#include "dentseg/eval.hpp"
#include "dentseg/net.hpp"
#include "dentseg/pipeline.hpp"
#include "dentseg/preprocess.hpp"
#include "dentseg/synth.hpp"

namespace {

using json = nlohmann::json;
using namespace dentseg;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  SynthConfig synth;
  net::NetConfig net;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  int count = 0;
  int threads = 2;
  int reps = 5;
  int index = 0;
  std::string data, noise_bank, checkpoint, out, report;
};

double parse_number(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw UsageError("config: value '" + value + "' for key '" + key + "' is not a number");
  }
}

void apply_kv(RunConfig& rc, const std::string& key, const std::string& value) {
  auto num = [&] { return parse_number(key, value); };
  if (key == "world_x") rc.synth.world_x = num();
  else if (key == "world_y") rc.synth.world_y = num();
  else if (key == "grid_w") rc.synth.width = static_cast<int>(num());
  else if (key == "grid_h") rc.synth.height = static_cast<int>(num());
  else if (key == "dent_prob") rc.synth.dent_prob = num();
  else if (key == "dent_decay") rc.synth.dent_decay = num();
  else if (key == "sigma_w") rc.synth.sigma_w = num();
  else if (key == "xy_jitter") rc.synth.xy_jitter = num();
  else if (key == "rot_limit_deg") rc.synth.rot_limit_deg = num();
  else if (key == "curvature_min") rc.synth.curvature.lo = num();
  else if (key == "curvature_max") rc.synth.curvature.hi = num();
  else if (key == "dent_extent_min") rc.synth.dent_extent.lo = num();
  else if (key == "dent_extent_max") rc.synth.dent_extent.hi = num();
  else if (key == "dent_depth_min") rc.synth.dent_depth.lo = num();
  else if (key == "dent_depth_max") rc.synth.dent_depth.hi = num();
  else if (key == "levels") rc.net.levels = static_cast<int>(num());
  else if (key == "stem") rc.net.stem = static_cast<int>(num());
  else if (key == "skip_fraction") rc.net.skip_fraction = num();
  else if (key == "threshold") rc.net.threshold = static_cast<float>(num());
  else if (key == "lr") rc.net.lr = num();
  else if (key == "lr_decay") rc.net.lr_decay = num();
  else if (key == "batch") rc.net.batch = static_cast<int>(num());
  else if (key == "epochs") rc.net.epochs = static_cast<int>(num());
  else if (key == "target_iou") rc.net.target_iou = num();
  else if (key == "val_fraction") rc.val_fraction = num();
  else if (key == "seed") rc.seed = static_cast<std::uint64_t>(num());
  else if (key == "count") rc.count = static_cast<int>(num());
  else if (key == "threads") rc.threads = static_cast<int>(num());
  else if (key == "reps") rc.reps = static_cast<int>(num());
  else if (key == "index") rc.index = static_cast<int>(num());
  else if (key == "data") rc.data = value;
  else if (key == "noise_bank") rc.noise_bank = value;
  else if (key == "checkpoint") rc.checkpoint = value;
  else if (key == "out") rc.out = value;
  else if (key == "report") rc.report = value;
  else throw UsageError("config: unknown key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

void load_config_file(RunConfig& rc, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config: cannot open " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config: line " + std::to_string(line_no) + " is not key=value");
    }
    apply_kv(rc, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void print_metrics(const Metrics& m, const ConfusionMatrix& cm, std::ostream& os,
                   const std::string& json_path) {
  auto fmt = [](const std::optional<double>& v) {
    if (!v) return std::string("undefined");
    std::ostringstream ss;
    ss.precision(6);
    ss << std::fixed << *v;
    return ss.str();
  };
  os << "tp=" << cm.tp << "\nfp=" << cm.fp << "\nfn=" << cm.fn << "\ntn=" << cm.tn << "\n";
  os << "iou=" << fmt(m.iou) << "\nprecision=" << fmt(m.precision)
     << "\nrecall=" << fmt(m.recall) << "\naccuracy=" << fmt(m.accuracy) << "\n";

  json j;
  j["confusion"] = {{"tp", cm.tp}, {"fp", cm.fp}, {"fn", cm.fn}, {"tn", cm.tn}};
  auto set = [&](const char* key, const std::optional<double>& v) {
    if (v) j["metrics"][key] = *v;
    else j["metrics"][key] = nullptr;
  };
  set("iou", m.iou);
  set("precision", m.precision);
  set("recall", m.recall);
  set("accuracy", m.accuracy);
  os << j.dump(2) << "\n";
  if (!json_path.empty()) {
    std::ofstream jf(json_path, std::ios::trunc);
    if (!jf) throw std::runtime_error("cannot write report to " + json_path);
    jf << j.dump(2) << "\n";
  }
}

int cmd_generate(RunConfig& rc) {
  if (rc.count < 1) throw UsageError("generate: --count must be >= 1");
  if (rc.out.empty()) throw UsageError("generate: --out is required");
  try {
    rc.synth.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  DatasetWriter writer(rc.out, rc.synth.width, rc.synth.height,
                       static_cast<float>(rc.synth.world_x), static_cast<float>(rc.synth.world_y),
                       kDatasetHasMask);
  std::vector<long> dent_histogram;
  long positive_cells = 0;
  const long cells_per_sample = static_cast<long>(rc.synth.width) * rc.synth.height;

  const int workers = std::max(1, rc.threads);
  for (int base = 0; base < rc.count; base += workers) {
    const int n = std::min(workers, rc.count - base);
    std::vector<std::future<LabelledSample>> chunk;
    for (int k = 0; k < n; ++k) {
      chunk.push_back(std::async(std::launch::async, [&rc, base, k] {
        return generate_sample(rc.synth, rc.seed, static_cast<std::uint64_t>(base + k));
      }));
    }
    for (int k = 0; k < n; ++k) {
      LabelledSample sample = chunk[k].get();
      writer.append(sample.surface, &sample.truth);
      const size_t dents = sample.provenance.dents.size();
      if (dent_histogram.size() <= dents) dent_histogram.resize(dents + 1, 0);
      dent_histogram[dents]++;
      positive_cells += static_cast<long>((sample.truth.values != 0).count());
      if ((base + k + 1) % 1000 == 0) {
        std::cout << "generated " << (base + k + 1) << "/" << rc.count << "\n" << std::flush;
      }
    }
  }
  writer.close();

  std::cout << "samples=" << rc.count << "\n";
  long dented = 0, total_dents = 0;
  for (size_t n = 0; n < dent_histogram.size(); ++n) {
    std::cout << "dents_" << n << "=" << dent_histogram[n] << "\n";
    if (n > 0) dented += dent_histogram[n];
    total_dents += static_cast<long>(n) * dent_histogram[n];
  }
  std::cout << "dent_frequency=" << static_cast<double>(dented) / rc.count << "\n"
            << "mean_dents=" << static_cast<double>(total_dents) / rc.count << "\n"
            << "positive_fraction="
            << static_cast<double>(positive_cells) / (cells_per_sample * rc.count) << "\n"
            << "wrote " << rc.out << "\n";
  return 0;
}

int cmd_ingest_noise(RunConfig& rc, const std::vector<std::string>& scans) {
  if (scans.empty()) throw UsageError("ingest-noise: at least one scan path is required");
  if (rc.out.empty()) throw UsageError("ingest-noise: --out is required");

  NoiseBank bank;
  for (const std::string& path : scans) {
    const SurfaceGrid scan = read_cloud(path);
    bank.maps.push_back(ingest_flat_scan(scan, path));
    const auto& r = bank.maps.back().residuals;
    std::cout << "ingested " << path << " (" << r.width() << "x" << r.height()
              << ", rms=" << std::sqrt(r.values.cast<double>().square().mean()) << " mm)\n";
  }
  write_noise_bank(bank, rc.out);
  std::cout << "wrote " << bank.maps.size() << " noise maps to " << rc.out << "\n";
  return 0;
}

int cmd_train(RunConfig& rc) {
  if (rc.data.empty()) throw UsageError("train: --data is required");
  if (rc.out.empty()) throw UsageError("train: --out is required");
  rc.net.seed = rc.seed;

  std::optional<NoiseBank> bank;
  if (!rc.noise_bank.empty()) bank = read_noise_bank(rc.noise_bank);

  const int total = DatasetReader(rc.data).count();
  const SplitIndices split = split_dataset(total, rc.val_fraction);

  PreprocessedDatasetSource::Options train_opt;
  train_opt.bank = bank ? &*bank : nullptr;
  train_opt.noise_seed = rc.seed ^ 0xBA5EBA11;
  PreprocessedDatasetSource train_source(rc.data, split.train, train_opt);
  PreprocessedDatasetSource val_source(rc.data, split.val, train_opt);

  net::Network network(rc.net);
  std::cout << "training on " << split.train.size() << " samples, validating on "
            << split.val.size() << " (" << network.parameter_count() << " parameters"
            << (bank ? ", noise bank " + rc.noise_bank : "") << ")\n";

  const auto t0 = std::chrono::steady_clock::now();
  const net::TrainReport report =
      net::train(network, train_source, val_source, [](int epoch, double loss, double iou) {
        std::cout << "epoch=" << epoch << " loss=" << loss << " val_iou=" << iou << "\n"
                  << std::flush;
      });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "best_epoch=" << report.best_epoch << " best_val_iou=" << report.best_val_iou
            << " train_seconds=" << seconds << "\n";

  net::save(network, rc.out, report.best_epoch, report.best_val_iou);
  std::cout << "wrote checkpoint " << rc.out << "\n";

  if (!rc.report.empty()) {
    json j;
    j["epoch_loss"] = report.epoch_loss;
    j["epoch_val_iou"] = report.epoch_val_iou;
    j["best_epoch"] = report.best_epoch;
    j["best_val_iou"] = report.best_val_iou;
    j["steps"] = report.steps;
    j["train_seconds"] = seconds;
    std::ofstream jf(rc.report, std::ios::trunc);
    if (!jf) throw std::runtime_error("cannot write report to " + rc.report);
    jf << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_predict(RunConfig& rc, const std::string& cloud_path) {
  if (rc.checkpoint.empty()) throw UsageError("predict: --checkpoint is required");
  if (rc.out.empty()) throw UsageError("predict: --out is required");

  net::LoadedNetwork loaded = net::load(rc.checkpoint);
  const SurfaceGrid cloud = read_cloud(cloud_path);
  const Preprocessed pre = preprocess(cloud);
  const net::Prediction prediction = net::predict(*loaded.net, pre, rc.net.threshold);

  write_mask_pgm(prediction.mask, rc.out + ".mask.pgm");
  write_overlay(pre.residuals, &prediction.mask, nullptr, rc.out + ".overlay.ppm");

  const double positive = (prediction.mask.values != 0).count() /
                          static_cast<double>(prediction.mask.values.size());
  std::cout << "points=" << cloud.width() * cloud.height() << " dented_fraction=" << positive
            << "\nwrote " << rc.out << ".mask.pgm and " << rc.out << ".overlay.ppm\n";
  return 0;
}

int cmd_evaluate(RunConfig& rc) {
  if (rc.checkpoint.empty()) throw UsageError("evaluate: --checkpoint is required");
  if (rc.data.empty()) throw UsageError("evaluate: --data is required");

  net::LoadedNetwork loaded = net::load(rc.checkpoint);
  loaded.net->set_threshold(rc.net.threshold);
  const int total = DatasetReader(rc.data).count();
  std::vector<int> all(total);
  std::iota(all.begin(), all.end(), 0);

  std::optional<NoiseBank> bank;
  PreprocessedDatasetSource::Options opt;
  if (!rc.noise_bank.empty()) {
    bank = read_noise_bank(rc.noise_bank);
    opt.bank = &*bank;
    opt.epoch_varying_noise = false;
    opt.noise_seed = rc.seed ^ 0xBA5EBA11;
  }
  PreprocessedDatasetSource source(rc.data, all, opt);
  auto [metrics, cm] = score_dataset(*loaded.net, source);
  print_metrics(metrics, cm, std::cout, rc.report);
  return 0;
}

int cmd_bench(RunConfig& rc, const std::string& cloud_path) {
  if (rc.checkpoint.empty()) throw UsageError("bench: --checkpoint is required");
  if (rc.reps < 3) throw UsageError("bench: --reps must be >= 3");

  net::LoadedNetwork loaded = net::load(rc.checkpoint);
  SurfaceGrid grid;
  if (!cloud_path.empty()) {
    grid = read_cloud(cloud_path);
  } else {
    SynthConfig bench_cfg = rc.synth;
    bench_cfg.width = 960;
    bench_cfg.height = 640;
    grid = generate_sample(bench_cfg, rc.seed, 0).surface;
    std::cout << "benchmarking on a generated 960x640 sample\n";
  }

  const BenchReport report = bench(*loaded.net, grid, rc.reps);
  std::cout << "points=" << report.points << "\nrepetitions=" << report.repetitions
            << "\npreprocess_s=" << report.preprocess_s << "\ninference_s=" << report.inference_s
            << "\ntotal_s=" << report.total_s << "\npps_preprocess=" << report.pps_preprocess
            << "\npps_inference=" << report.pps_inference << "\npps_combined=" << report.pps
            << "\n";
  return 0;
}

int cmd_render(RunConfig& rc) {
  if (rc.data.empty()) throw UsageError("render: --data is required");
  if (rc.out.empty()) throw UsageError("render: --out is required");

  DatasetReader reader(rc.data);
  if (rc.index < 0 || rc.index >= reader.count()) {
    throw UsageError("render: --index outside dataset");
  }
  reader.seek(rc.index);
  SurfaceGrid surface;
  LabelMask truth;
  if (!reader.next(surface, &truth)) throw std::runtime_error("render: record unavailable");
  const Preprocessed pre = preprocess(surface);

  if (!rc.checkpoint.empty()) {
    net::LoadedNetwork loaded = net::load(rc.checkpoint);
    const net::Prediction prediction = net::predict(*loaded.net, pre, rc.net.threshold);
    write_overlay(pre.residuals, &prediction.mask, &truth, rc.out);
  } else {
    // Without a checkpoint, render the ground truth (all true positives).
    write_overlay(pre.residuals, &truth, &truth, rc.out);
  }
  std::cout << "wrote " << rc.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig rc;
  try {
    for (int i = 1; i < argc; ++i) {
      const std::string a = argv[i];
      if (a == "--config" && i + 1 < argc) load_config_file(rc, argv[i + 1]);
      else if (a.rfind("--config=", 0) == 0) load_config_file(rc, a.substr(9));
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  CLI::App app{"dent segmentation pipeline: synthetic data, scanner noise, "
               "2.5D reduction, FCN training and evaluation"};
  app.require_subcommand(1);

  std::string cloud_path, config_path;
  std::vector<std::string> scan_paths;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value configuration file");
    cmd->add_option("--seed", rc.seed, "master seed");
    cmd->add_option("--threads", rc.threads, "worker cap for parallel stages");
  };

  CLI::App* generate = app.add_subcommand("generate", "generate a labelled synthetic dataset");
  add_common(generate);
  generate->add_option("--count", rc.count, "number of samples");
  generate->add_option("--out", rc.out, "output dataset path");
  generate->add_option("--grid-w", rc.synth.width, "grid width (multiple of 16)");
  generate->add_option("--grid-h", rc.synth.height, "grid height (multiple of 16)");
  generate->add_option("--sigma-w", rc.synth.sigma_w, "Gaussian z-noise sigma, mm");
  generate->add_option("--dent-prob", rc.synth.dent_prob, "first-dent probability p");

  CLI::App* ingest = app.add_subcommand("ingest-noise", "build a noise bank from flat-board scans");
  add_common(ingest);
  ingest->add_option("scans", scan_paths, "flat-board scan files");
  ingest->add_option("--out", rc.out, "output noise bank path");

  CLI::App* train = app.add_subcommand("train", "train the segmentation network");
  add_common(train);
  train->add_option("--data", rc.data, "training dataset");
  train->add_option("--noise-bank", rc.noise_bank, "mix real noise patches during training");
  train->add_option("--out", rc.out, "checkpoint output path");
  train->add_option("--report", rc.report, "JSON training report path");
  train->add_option("--epochs", rc.net.epochs, "training epochs");
  train->add_option("--batch", rc.net.batch, "batch size");
  train->add_option("--lr", rc.net.lr, "learning rate");
  train->add_option("--lr-decay", rc.net.lr_decay, "per-epoch learning-rate multiplier");
  train->add_option("--levels", rc.net.levels, "encoder/decoder levels");
  train->add_option("--stem", rc.net.stem, "stem channels");
  train->add_option("--target-iou", rc.net.target_iou, "stop once validation IoU reaches this");
  train->add_option("--val-fraction", rc.val_fraction, "validation split fraction");

  CLI::App* predict = app.add_subcommand("predict", "segment a point cloud");
  add_common(predict);
  predict->add_option("cloud", cloud_path, "input point cloud")->required();
  predict->add_option("--checkpoint", rc.checkpoint, "trained checkpoint");
  predict->add_option("--out", rc.out, "output prefix for mask and overlay");
  predict->add_option("--threshold", rc.net.threshold, "binarization threshold");

  CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a labelled dataset");
  add_common(evaluate);
  evaluate->add_option("--checkpoint", rc.checkpoint, "trained checkpoint");
  evaluate->add_option("--data", rc.data, "labelled dataset");
  evaluate->add_option("--noise-bank", rc.noise_bank, "corrupt samples with fixed noise patches");
  evaluate->add_option("--report", rc.report, "JSON metrics report path");
  evaluate->add_option("--threshold", rc.net.threshold, "binarization threshold");

  CLI::App* bench_cmd = app.add_subcommand("bench", "throughput benchmark");
  add_common(bench_cmd);
  bench_cmd->add_option("cloud", cloud_path, "input point cloud (generated when omitted)");
  bench_cmd->add_option("--checkpoint", rc.checkpoint, "trained checkpoint");
  bench_cmd->add_option("--reps", rc.reps, "repetitions (median reported)");

  CLI::App* render = app.add_subcommand("render", "render a dataset sample overlay");
  add_common(render);
  render->add_option("--data", rc.data, "dataset path");
  render->add_option("--index", rc.index, "sample index");
  render->add_option("--checkpoint", rc.checkpoint, "optional checkpoint for predictions");
  render->add_option("--out", rc.out, "output image path");
  render->add_option("--threshold", rc.net.threshold, "binarization threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*generate) return cmd_generate(rc);
    if (*ingest) return cmd_ingest_noise(rc, scan_paths);
    if (*train) return cmd_train(rc);
    if (*predict) return cmd_predict(rc, cloud_path);
    if (*evaluate) return cmd_evaluate(rc);
    if (*bench_cmd) return cmd_bench(rc, cloud_path);
    if (*render) return cmd_render(rc);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
