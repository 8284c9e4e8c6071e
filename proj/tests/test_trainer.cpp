#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "doctest.h"
#include "vscc/datapipe.hpp"
#include "vscc/trainer.hpp"

using namespace vscc;
namespace fs = std::filesystem;

namespace {

// Small corpus shared by the trainer tests; generated once.
const DatasetSplit& shared_split() {
  static const DatasetSplit split = [] {
    const fs::path dir = fs::temp_directory_path() / "vscc_trainer_corpus";
    fs::remove_all(dir);
    CorpusSpec spec;
    spec.train_classes = 4;
    spec.test_classes = 2;
    spec.train_per_class = 12;
    spec.test_per_class = 4;
    spec.image_size = 16;
    spec.seed = 99;
    generate_corpus(dir.string(), spec);
    DatasetOptions opts;
    opts.crop_size = 16;
    return load_dataset(dir.string(), opts);
  }();
  return split;
}

TrainConfig tiny_config(Method method) {
  TrainConfig cfg;
  cfg.method = method;
  cfg.train_snr_db = 5.0;
  cfg.cmc = 5.0;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-3;
  cfg.seed = 1234;
  cfg.architecture.image_size = 16;
  cfg.architecture.stage_widths = {12, 16};
  cfg.architecture.latent_channels = 3;
  cfg.architecture.groupnorm_group_size = 4;
  return cfg;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig cfg = tiny_config(Method::kVscc);
  CHECK_NOTHROW(cfg.validate());
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config(Method::kVscc);
  cfg.cmc = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config(Method::kAe);
  cfg.cmc = 0.0;  // irrelevant for AE
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("vscc training drives the loss down and keeps the KL term a true KL") {
  TrainConfig cfg = tiny_config(Method::kVscc);
  cfg.epochs = 3;
  const TrainResult result = train(cfg, shared_split());
  REQUIRE(result.epoch_losses.size() == 3);
  for (const auto& loss : result.epoch_losses) {
    CHECK(std::isfinite(loss.total));
    CHECK(loss.channel_matching_term >= -1e-9);
  }
  CHECK(result.epoch_losses.back().total < result.epoch_losses.front().total);
  CHECK(result.checkpoint.training_metadata.method == "vscc");
  CHECK(result.checkpoint.training_metadata.epoch == 3);
  CHECK(result.checkpoint.training_metadata.dataset_fingerprint == shared_split().fingerprint);
}

TEST_CASE("ae overfits a 16-image set toward zero loss") {
  // Smooth colour gradients: an easy memorization target.
  DatasetSplit overfit;
  overfit.fingerprint = "overfit";
  Rng rng(5);
  for (int i = 0; i < 16; ++i) {
    Image img;
    img.height = 16;
    img.width = 16;
    img.channels = 3;
    img.label = i / 8;
    img.pixels.resize(16 * 16 * 3);
    const double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) {
        img.at(y, x, 0) = static_cast<uint8_t>(255 * std::clamp(a * x / 16.0 + 0.2 * b, 0.0, 1.0));
        img.at(y, x, 1) = static_cast<uint8_t>(255 * std::clamp(b * y / 16.0 + 0.2 * c, 0.0, 1.0));
        img.at(y, x, 2) =
            static_cast<uint8_t>(255 * std::clamp(c * (x + y) / 32.0 + 0.2 * a, 0.0, 1.0));
      }
    }
    overfit.train.push_back(std::move(img));
  }
  Image probe = overfit.train[0];
  probe.label = 99;
  overfit.test.push_back(std::move(probe));

  TrainConfig cfg = tiny_config(Method::kAe);
  cfg.train_snr_db = std::numeric_limits<double>::infinity();  // noiseless
  cfg.epochs = 200;  // one step per epoch at batch 16
  cfg.learning_rate = 3e-3;
  const TrainResult result = train(cfg, overfit);
  const double initial = result.epoch_losses.front().total;
  const double final_loss = result.epoch_losses.back().total;
  CHECK(final_loss < 0.02);
  CHECK(final_loss < 0.05 * initial);
}

TEST_CASE("seed reproducibility: identical runs produce identical losses") {
  const TrainConfig cfg = tiny_config(Method::kVscc);
  const TrainResult a = train(cfg, shared_split());
  const TrainResult b = train(cfg, shared_split());
  REQUIRE(a.epoch_losses.size() == b.epoch_losses.size());
  for (size_t i = 0; i < a.epoch_losses.size(); ++i) {
    CHECK(a.epoch_losses[i].total == b.epoch_losses[i].total);
    CHECK(a.epoch_losses[i].channel_matching_term == b.epoch_losses[i].channel_matching_term);
    CHECK(a.epoch_losses[i].reconstruction_term == b.epoch_losses[i].reconstruction_term);
  }
  CHECK(a.checkpoint.parameters == b.checkpoint.parameters);
}

TEST_CASE("training resumes exactly from state plus checkpoint") {
  TrainConfig cfg = tiny_config(Method::kVae);
  cfg.epochs = 4;

  Trainer full(cfg, shared_split());
  std::vector<LossBreakdown> full_losses;
  for (int e = 0; e < 4; ++e) full_losses.push_back(full.run_epoch());

  Trainer first_half(cfg, shared_split());
  first_half.run_epoch();
  first_half.run_epoch();
  const Checkpoint snapshot = first_half.make_checkpoint();
  const TrainState state = first_half.state();

  Trainer resumed(cfg, shared_split(), snapshot, state);
  const LossBreakdown e3 = resumed.run_epoch();
  const LossBreakdown e4 = resumed.run_epoch();
  CHECK(e3.total == full_losses[2].total);
  CHECK(e4.total == full_losses[3].total);
}

TEST_CASE("vscc and vae share the architecture and initialization") {
  const TrainConfig vscc_cfg = tiny_config(Method::kVscc);
  const TrainConfig vae_cfg = tiny_config(Method::kVae);
  Trainer a(vscc_cfg, shared_split());
  Trainer b(vae_cfg, shared_split());
  REQUIRE(a.model().params().size() == b.model().params().size());
  for (size_t i = 0; i < a.model().params().size(); ++i) {
    CHECK(a.model().params()[i]->name == b.model().params()[i]->name);
    CHECK(a.model().params()[i]->value.data == b.model().params()[i]->value.data);
  }
}

TEST_CASE("divergence aborts with a diagnostic") {
  TrainConfig cfg = tiny_config(Method::kVscc);
  cfg.learning_rate = 1e12;
  cfg.epochs = 50;
  CHECK_THROWS_WITH_AS(train(cfg, shared_split()), doctest::Contains("diverged"),
                       std::runtime_error);
}

TEST_CASE("sweep trains, skips on rerun, and records failures") {
  const fs::path dir = fs::temp_directory_path() / "vscc_sweep_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string manifest = (dir / "manifest.json").string();

  TrainConfig base = tiny_config(Method::kAe);
  base.epochs = 1;
  base.checkpoint_dir = (dir / "ckpt").string();

  const std::vector<SweepCell> grid{{Method::kAe, 5.0, 7.0}};  // cmc ignored with warning
  const auto first = sweep(grid, base, shared_split(), manifest);
  REQUIRE(first.size() == 1);
  CHECK(first[0].status == "trained");
  CHECK(fs::exists(first[0].checkpoint_path));

  SUBCASE("rerun skips the completed cell") {
    const auto second = sweep(grid, base, shared_split(), manifest);
    CHECK(second[0].status == "skipped");
    CHECK(second[0].checkpoint_path == first[0].checkpoint_path);
  }

  SUBCASE("a failing cell is recorded and the sweep continues") {
    const std::vector<SweepCell> bad_grid{{Method::kVscc, 5.0, -1.0},  // invalid cmc
                                          {Method::kVae, 5.0, 0.0}};
    const auto results = sweep(bad_grid, base, shared_split(), manifest);
    REQUIRE(results.size() == 2);
    CHECK(results[0].status == "failed");
    CHECK(!results[0].error.empty());
    CHECK(results[1].status == "trained");
  }

  SUBCASE("fail-fast rethrows on the first failure") {
    const std::vector<SweepCell> bad_grid{{Method::kVscc, 5.0, -1.0}};
    SweepOptions opts;
    opts.fail_fast = true;
    CHECK_THROWS(sweep(bad_grid, base, shared_split(), manifest, opts));
  }
}
