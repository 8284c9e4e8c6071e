#include "vscc/experiment.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "vscc/hash.hpp"
#include "vscc/version.hpp"

namespace vscc {

namespace {
using json = nlohmann::ordered_json;

json to_json(const ExperimentConfig& c) {
  return json{
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"dataset",
       {{"root", c.dataset_root}, {"crop_size", c.crop_size}, {"on_error", c.on_error}}},
      {"architecture",
       {{"image_size", c.architecture.image_size},
        {"input_channels", c.architecture.input_channels},
        {"stage_widths", c.architecture.stage_widths},
        {"latent_channels", c.architecture.latent_channels},
        {"groupnorm_group_size", c.architecture.groupnorm_group_size},
        {"attention_enabled", c.architecture.attention_enabled}}},
      {"train",
       {{"method", c.train_method},
        {"snr_db", c.train_snr_db},
        {"cmc", c.cmc},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate},
        {"reconstruction_weight", c.reconstruction_weight},
        {"log_every", c.log_every}}},
      {"channel", {{"normalize_power", c.normalize_power}}},
      {"eval",
       {{"test_snr_db", c.test_snr_db},
        {"resample_count", c.resample_count},
        {"noise_on_variance", c.noise_on_variance}}},
      {"sweep",
       {{"methods", c.sweep_methods},
        {"snr_db", c.sweep_snr_db},
        {"cmc", c.sweep_cmc}}}};
}

ExperimentConfig from_json(const json& j) {
  ExperimentConfig c;
  c.seed = j.value("seed", c.seed);
  c.output_dir = j.value("output_dir", c.output_dir);
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    c.dataset_root = d.value("root", c.dataset_root);
    c.crop_size = d.value("crop_size", c.crop_size);
    c.on_error = d.value("on_error", c.on_error);
  }
  if (j.contains("architecture")) {
    const auto& a = j.at("architecture");
    c.architecture.image_size = a.value("image_size", c.architecture.image_size);
    c.architecture.input_channels = a.value("input_channels", c.architecture.input_channels);
    if (a.contains("stage_widths"))
      c.architecture.stage_widths = a.at("stage_widths").get<std::vector<int>>();
    c.architecture.latent_channels = a.value("latent_channels", c.architecture.latent_channels);
    c.architecture.groupnorm_group_size =
        a.value("groupnorm_group_size", c.architecture.groupnorm_group_size);
    c.architecture.attention_enabled =
        a.value("attention_enabled", c.architecture.attention_enabled);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    c.train_method = t.value("method", c.train_method);
    c.train_snr_db = t.value("snr_db", c.train_snr_db);
    c.cmc = t.value("cmc", c.cmc);
    c.epochs = t.value("epochs", c.epochs);
    c.batch_size = t.value("batch_size", c.batch_size);
    c.learning_rate = t.value("learning_rate", c.learning_rate);
    c.reconstruction_weight = t.value("reconstruction_weight", c.reconstruction_weight);
    c.log_every = t.value("log_every", c.log_every);
  }
  if (j.contains("channel"))
    c.normalize_power = j.at("channel").value("normalize_power", c.normalize_power);
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    if (e.contains("test_snr_db")) c.test_snr_db = e.at("test_snr_db").get<std::vector<double>>();
    c.resample_count = e.value("resample_count", c.resample_count);
    c.noise_on_variance = e.value("noise_on_variance", c.noise_on_variance);
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    if (s.contains("methods")) c.sweep_methods = s.at("methods").get<std::vector<std::string>>();
    if (s.contains("snr_db")) c.sweep_snr_db = s.at("snr_db").get<std::vector<double>>();
    if (s.contains("cmc")) c.sweep_cmc = s.at("cmc").get<std::vector<double>>();
  }
  return c;
}
}  // namespace

TrainConfig ExperimentConfig::make_train_config() const {
  TrainConfig t;
  t.method = method_from_name(train_method);
  t.train_snr_db = train_snr_db;
  t.cmc = cmc;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.learning_rate = learning_rate;
  t.reconstruction_weight = reconstruction_weight;
  t.seed = seed;
  t.architecture = architecture;
  t.checkpoint_dir = output_dir + "/checkpoints";
  t.log_every = log_every;
  t.normalize_power = normalize_power;
  return t;
}

std::string ExperimentConfig::fingerprint() const {
  Fnv1a h;
  h.update(to_json(*this).dump());
  h.update(std::string(kCodeVersion));
  return h.hex();
}

std::vector<SweepCell> make_sweep_grid(const ExperimentConfig& config) {
  std::vector<SweepCell> grid;
  for (const auto& method_name_str : config.sweep_methods) {
    const Method m = method_from_name(method_name_str);
    for (double snr : config.sweep_snr_db) {
      if (m == Method::kVscc) {
        for (double cmc : config.sweep_cmc) grid.push_back({m, snr, cmc});
      } else {
        grid.push_back({m, snr, 0.0});
      }
    }
  }
  return grid;
}

ExperimentConfig experiment_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text, nullptr, /*allow_exceptions=*/true, /*ignore_comments=*/true);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config parse error: ") + e.what());
  }
  return from_json(j);
}

std::string experiment_config_to_json_text(const ExperimentConfig& config) {
  return to_json(config).dump(2) + "\n";
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return experiment_config_from_json_text(ss.str());
}

void save_experiment_config(const ExperimentConfig& config, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write config file " + path);
  f << experiment_config_to_json_text(config);
}

}  // namespace vscc
