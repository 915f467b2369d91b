// dmwa: generate synthetic data, train, evaluate, dump weights, run ablations.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "dmwa/config.hpp"
#include "dmwa/data_synth.hpp"
#include "dmwa/training.hpp"

namespace fs = std::filesystem;
using namespace dmwa;

namespace {

struct GlobalFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> weight_mode;
  std::optional<std::string> mode;
  bool strict_zs = false;
  bool f64 = false;
  bool shared_encoders = false;
  std::vector<std::string> overrides;
};

RunConfig resolve(const GlobalFlags& g) {
  KeyValues kv;
  if (!g.config_path.empty()) kv = read_key_values(g.config_path);
  for (const auto& o : g.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got `" + o + "`");
    kv[trim(o.substr(0, eq))] = trim(o.substr(eq + 1));
  }
  if (g.seed) kv["seed"] = std::to_string(*g.seed);
  if (g.out) kv["out"] = *g.out;
  if (g.weight_mode) kv["weight_mode"] = *g.weight_mode;
  if (g.mode) kv["score_mode"] = *g.mode;
  if (g.strict_zs) kv["strict_zs"] = "true";
  if (g.f64) kv["f64"] = "true";
  if (g.shared_encoders) kv["shared_encoders"] = "true";
  RunConfig c = run_config_from_entries(kv);
  c.validate();
  return c;
}

Dataset load_or_fail(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "manifest")) throw Error("no dataset at `" + dir + "` (run gen-data first)");
  return load_dataset(dir);
}

// The checkpoint was trained on the dataset's split; anything else is an
// incompatible pairing.
template <typename Scalar>
Model<Scalar> load_compatible(const std::string& checkpoint, const RunConfig& config, const Dataset& data) {
  const ModelConfig stored = read_checkpoint_config(checkpoint);
  RunConfig expected = config;
  expected.dataset = data.config;
  expected.encoder = stored.encoder;
  expected.encoder.grid = data.config.grid;
  expected.text_dim = stored.text_dim;
  expected.cross_heads = stored.cross_heads;
  expected.shared_encoders = stored.shared_encoders;
  const std::string diff = config_diff(expected.model_config(), stored);
  if (!diff.empty()) throw ConfigError("checkpoint `" + checkpoint + "` does not fit the dataset: " + diff);
  return load_checkpoint<Scalar>(checkpoint);
}

template <typename Scalar>
void cmd_train(const RunConfig& config, const std::string& data_dir) {
  const Dataset data = load_or_fail(data_dir);
  RunConfig c = config;
  c.dataset = data.config;
  TrainOptions options;
  options.out_dir = c.out;
  options.log = &std::cerr;
  const auto run = train<Scalar>(c, data, options);
  std::cout << "trained " << run.steps.size() << " steps (" << run.skipped_batches << " skipped); checkpoints in "
            << (fs::path(c.out) / "checkpoints").string() << '\n';
}

template <typename Scalar>
void cmd_eval(const RunConfig& config, const std::string& data_dir, const std::string& checkpoint) {
  const Dataset data = load_or_fail(data_dir);
  const auto model = load_compatible<Scalar>(checkpoint, config, data);
  const auto report = evaluate(model, data, config);
  write_report(config.out, report);
  std::cout << report_json(report) << '\n';
}

template <typename Scalar>
void cmd_dump_weights(const RunConfig& config, const std::string& data_dir, const std::string& checkpoint,
                      int epochs) {
  const Dataset data = load_or_fail(data_dir);
  const auto model = load_compatible<Scalar>(checkpoint, config, data);
  const auto records = dump_weights(model, data, config, epochs);
  fs::create_directories(config.out);
  const auto path = fs::path(config.out) / "weights.csv";
  std::ofstream out(path);
  write_weights_csv(out, records);
  std::cout << "wrote " << records.size() << " rows to " << path.string() << '\n';
}

template <typename Scalar>
void cmd_ablate(const RunConfig& config, const std::string& data_dir) {
  const Dataset data = load_or_fail(data_dir);
  RunConfig c = config;
  c.dataset = data.config;
  const auto results = run_ablations<Scalar>(c, data, c.out, &std::cerr);
  const auto path = fs::path(c.out) / "ablation.csv";
  std::ofstream out(path);
  write_ablation_csv(out, results, c.k_list);
  write_ablation_csv(std::cout, results, c.k_list);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weighted cross-modal training and zero-shot retrieval on synthetic sketch/image data"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "override one config key (key=value), repeatable");
  app.add_option("--seed", g.seed, "run seed");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--weight-mode", g.weight_mode, "threshold rule")->check(CLI::IsMember({"literal", "attenuate"}));
  app.add_option("--mode", g.mode, "retrieval scoring")->check(CLI::IsMember({"cross", "fast"}));
  app.add_flag("--strict-zs", g.strict_zs, "reject seen-class samples at evaluation");
  app.add_flag("--f64", g.f64, "64-bit arithmetic");
  app.add_flag("--shared-encoders", g.shared_encoders, "one encoder for both modalities");

  std::string data_dir = "data";
  std::string checkpoint;
  int dump_epochs = 1;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset into --out");
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--data", data_dir, "dataset directory");
  auto* eval_cmd = app.add_subcommand("eval", "zero-shot evaluation of a checkpoint");
  eval_cmd->add_option("--data", data_dir, "dataset directory");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  auto* dump_cmd = app.add_subcommand("dump-weights", "per-sample alignment scores and weights as CSV");
  dump_cmd->add_option("--data", data_dir, "dataset directory");
  dump_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  dump_cmd->add_option("--epochs", dump_epochs, "passes over the training split")->check(CLI::PositiveNumber);
  auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate all four ablation rows");
  ablate_cmd->add_option("--data", data_dir, "dataset directory");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig config = resolve(g);
    const bool f64 = config.f64;
    if (gen->parsed()) {
      const Dataset data = generate(config.dataset);
      save_dataset(data, config.out);
      std::cout << "wrote " << data.train.size() << " training pairs, " << data.queries.size() << " queries, "
                << data.gallery.size() << " gallery images to " << config.out << '\n';
    } else if (train_cmd->parsed()) {
      f64 ? cmd_train<double>(config, data_dir) : cmd_train<float>(config, data_dir);
    } else if (eval_cmd->parsed()) {
      f64 ? cmd_eval<double>(config, data_dir, checkpoint) : cmd_eval<float>(config, data_dir, checkpoint);
    } else if (dump_cmd->parsed()) {
      f64 ? cmd_dump_weights<double>(config, data_dir, checkpoint, dump_epochs)
          : cmd_dump_weights<float>(config, data_dir, checkpoint, dump_epochs);
    } else if (ablate_cmd->parsed()) {
      f64 ? cmd_ablate<double>(config, data_dir) : cmd_ablate<float>(config, data_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
