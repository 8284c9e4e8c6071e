#include <cmath>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vscc/datapipe.hpp"
#include "vscc/evaluator.hpp"
#include "vscc/experiment.hpp"
#include "vscc/report.hpp"
#include "vscc/trainer.hpp"
#include "vscc/version.hpp"

namespace fs = std::filesystem;
using namespace vscc;

namespace {

std::vector<double> parse_snr_list(const std::string& range, const std::string& csv) {
  std::vector<double> snrs;
  auto parse_one = [](const std::string& tok) {
    if (tok == "inf" || tok == "noiseless") return std::numeric_limits<double>::infinity();
    return std::stod(tok);
  };
  if (!range.empty()) {
    // lo:hi:step
    const auto c1 = range.find(':');
    const auto c2 = range.find(':', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw CLI::ValidationError("--snr-range", "expected lo:hi:step, e.g. -10:25:5");
    const double lo = std::stod(range.substr(0, c1));
    const double hi = std::stod(range.substr(c1 + 1, c2 - c1 - 1));
    const double step = std::stod(range.substr(c2 + 1));
    if (step <= 0) throw CLI::ValidationError("--snr-range", "step must be > 0");
    for (double v = lo; v <= hi + 1e-9; v += step) snrs.push_back(v);
  }
  if (!csv.empty()) {
    std::istringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) snrs.push_back(parse_one(tok));
  }
  return snrs;
}

DatasetSplit load_split(const ExperimentConfig& cfg) {
  DatasetOptions opts;
  opts.crop_size = cfg.crop_size;
  opts.on_error = cfg.on_error == "skip" ? LoadErrorPolicy::kSkip : LoadErrorPolicy::kFail;
  return load_dataset(cfg.dataset_root, opts);
}

std::string default_kb_path(const std::string& checkpoint_path) {
  fs::path p(checkpoint_path);
  p.replace_extension(".kb");
  return p.string();
}

int cmd_gen_data(const std::string& out, const CorpusSpec& spec) {
  generate_corpus(out, spec);
  std::cout << "wrote corpus to " << out << " (" << spec.train_classes << " train classes x "
            << spec.train_per_class << ", " << spec.test_classes << " test classes x "
            << spec.test_per_class << ", " << spec.image_size << "x" << spec.image_size << ")\n";
  return 0;
}

int cmd_train(ExperimentConfig cfg) {
  const DatasetSplit data = load_split(cfg);
  const TrainResult result = train(cfg.make_train_config(), data);
  std::cout << "checkpoint: " << result.checkpoint_path << "\n";
  return 0;
}

int cmd_sweep(ExperimentConfig cfg, bool fail_fast) {
  const DatasetSplit data = load_split(cfg);
  const std::vector<SweepCell> grid = make_sweep_grid(cfg);
  TrainConfig base = cfg.make_train_config();
  const std::string manifest =
      (fs::path(cfg.output_dir) / "sweep_manifest.json").string();
  fs::create_directories(cfg.output_dir);
  SweepOptions opts;
  opts.fail_fast = fail_fast;
  const auto results = sweep(grid, base, data, manifest, opts);
  int failed = 0;
  for (const auto& r : results)
    if (r.status == "failed") ++failed;
  std::cout << "sweep: " << results.size() << " cells, " << failed << " failed, manifest "
            << manifest << "\n";
  return failed == 0 ? 0 : 2;
}

int cmd_kb_build(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                 std::string out_path, int batch) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  Model model(ckpt.architecture, /*init_seed=*/0);
  model.load(ckpt);
  const DatasetSplit data = load_split(cfg);
  const KnowledgeBase kb = build_knowledge_base(model.encoder(), data.train, batch,
                                                data.fingerprint, ckpt.fingerprint());
  if (out_path.empty()) out_path = default_kb_path(checkpoint_path);
  save_knowledge_base(kb, out_path);
  std::cout << "knowledge base: " << out_path << " (scalar variance " << kb.scalar_variance
            << ")\n";
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path,
             const std::string& mode_name, const std::string& snr_range,
             const std::string& snr_csv, std::string kb_path, int resamples,
             std::string out_path) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  Model model(ckpt.architecture, /*init_seed=*/0);
  model.load(ckpt);
  const DatasetSplit data = load_split(cfg);

  EvalConfig eval_cfg;
  eval_cfg.mode = eval_mode_from_name(mode_name);
  eval_cfg.test_snr_db = parse_snr_list(snr_range, snr_csv);
  if (eval_cfg.test_snr_db.empty()) eval_cfg.test_snr_db = cfg.test_snr_db;
  eval_cfg.resample_count = resamples > 0 ? resamples : cfg.resample_count;
  eval_cfg.seed = cfg.seed;
  eval_cfg.normalize_power = cfg.normalize_power;
  eval_cfg.noise_on_variance = cfg.noise_on_variance;
  if (eval_cfg.mode == EvalMode::kFixedVariance) {
    if (kb_path.empty()) kb_path = default_kb_path(checkpoint_path);
    if (!fs::exists(kb_path))
      throw std::runtime_error("eval: knowledge base " + kb_path +
                               " not found; build it first with: vscc kb-build --config <cfg> "
                               "--checkpoint " +
                               checkpoint_path);
    eval_cfg.knowledge_base = load_knowledge_base(kb_path);
  }

  const EvalResult result = evaluate(model, ckpt, data.test, eval_cfg, cfg.fingerprint());
  if (out_path.empty()) {
    fs::create_directories(fs::path(cfg.output_dir) / "results");
    out_path = (fs::path(cfg.output_dir) / "results" /
                (fs::path(checkpoint_path).stem().string() + "_" + result.mode + ".csv"))
                   .string();
  }
  write_eval_csv(result, out_path);
  write_eval_summary(result, out_path + ".summary.csv");
  std::cout << "results: " << out_path << "\n";
  for (const auto& a : result.aggregates())
    std::cout << "  test_snr=" << a.test_snr_db << " psnr=" << a.psnr_mean
              << " ssim=" << a.ssim_mean << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& results, const std::string& out_dir,
               bool mix_fingerprints) {
  ReportOptions opts;
  opts.out_dir = out_dir;
  opts.allow_mixed_fingerprints = mix_fingerprints;
  const auto emitted = generate_report(results, opts);
  for (const auto& p : emitted) std::cout << "wrote " << p << "\n";
  return 0;
}

int cmd_metrics(const std::string& ref_path, const std::string& cand_path) {
  const Image ref = read_ppm(ref_path);
  const Image cand = read_ppm(cand_path);
  std::cout << "psnr_db=" << psnr(ref, cand) << "\n";
  std::cout << "ssim=" << ssim(ref, cand) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"variational source-channel coding toolkit"};
  app.set_version_flag("--version", kCodeVersion);
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic labelled corpus");
  std::string gen_out = "data/synth32";
  CorpusSpec corpus;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--train-classes", corpus.train_classes);
  gen->add_option("--test-classes", corpus.test_classes);
  gen->add_option("--train-per-class", corpus.train_per_class);
  gen->add_option("--test-per-class", corpus.test_per_class);
  gen->add_option("--size", corpus.image_size);
  gen->add_option("--seed", corpus.seed);

  // shared config option plumbing
  std::string config_path;
  std::string method_override, checkpoint_path, mode_name, snr_range, snr_csv, kb_path, out_path;
  double snr_override = std::nan(""), cmc_override = std::nan("");
  int epochs_override = -1, resamples = -1, kb_batch = 16;
  long long seed_override = -1;
  bool fail_fast = false, mix_fingerprints = false;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config file")->required();
  };

  auto* tr = app.add_subcommand("train", "train one model");
  add_config(tr);
  tr->add_option("--method", method_override, "vscc|vae|ae");
  tr->add_option("--snr", snr_override, "training channel SNR in dB");
  tr->add_option("--cmc", cmc_override, "channel matching coefficient");
  tr->add_option("--epochs", epochs_override);
  tr->add_option("--seed", seed_override);

  auto* sw = app.add_subcommand("sweep", "train the full experiment grid");
  add_config(sw);
  sw->add_flag("--fail-fast", fail_fast, "stop at the first failed cell");

  auto* kb = app.add_subcommand("kb-build", "build the knowledge-base variance");
  add_config(kb);
  kb->add_option("--checkpoint", checkpoint_path)->required();
  kb->add_option("--out", out_path);
  kb->add_option("--batch", kb_batch);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint over test SNRs");
  add_config(ev);
  ev->add_option("--checkpoint", checkpoint_path)->required();
  ev->add_option("--mode", mode_name, "ae|transmission|fixed")->required();
  ev->add_option("--snr-range", snr_range, "lo:hi:step in dB, e.g. -10:25:5");
  ev->add_option("--snrs", snr_csv, "comma list of SNRs; 'inf' = noiseless");
  ev->add_option("--kb", kb_path, "knowledge base file (fixed mode)");
  ev->add_option("--resamples", resamples, "resample count n");
  ev->add_option("--out", out_path, "results csv path");

  auto* rp = app.add_subcommand("report", "emit plots and tables from results files");
  std::vector<std::string> results_paths;
  std::string report_dir = "report";
  rp->add_option("--results", results_paths, "results csv files")->required()->expected(-1);
  rp->add_option("--out-dir", report_dir);
  rp->add_flag("--mix-fingerprints", mix_fingerprints,
               "combine results with different config fingerprints");

  auto* mt = app.add_subcommand("metrics", "PSNR/SSIM between two PPM images");
  std::string ref_path, cand_path;
  mt->add_option("--ref", ref_path)->required();
  mt->add_option("--cand", cand_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  // Config problems are usage errors (exit 1); failures while running a
  // command are runtime errors (exit 2).
  ExperimentConfig cfg;
  try {
    if (!config_path.empty()) cfg = load_experiment_config(config_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, corpus);
    if (tr->parsed()) {
      if (!method_override.empty()) cfg.train_method = method_override;
      if (!std::isnan(snr_override)) cfg.train_snr_db = snr_override;
      if (!std::isnan(cmc_override)) cfg.cmc = cmc_override;
      if (epochs_override > 0) cfg.epochs = epochs_override;
      if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
      return cmd_train(cfg);
    }
    if (sw->parsed()) return cmd_sweep(cfg, fail_fast);
    if (kb->parsed()) return cmd_kb_build(cfg, checkpoint_path, out_path, kb_batch);
    if (ev->parsed())
      return cmd_eval(cfg, checkpoint_path, mode_name, snr_range, snr_csv, kb_path, resamples,
                      out_path);
    if (rp->parsed()) return cmd_report(results_paths, report_dir, mix_fingerprints);
    if (mt->parsed()) return cmd_metrics(ref_path, cand_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
