#include "dmwa/config.hpp"

#include <set>

namespace dmwa {

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::base: return "base";
    case Ablation::no_g_q: return "no-g-q";
    case Ablation::no_g: return "no-g";
    case Ablation::full: return "full";
  }
  return "?";
}

Ablation parse_ablation(const std::string& name) {
  for (const Ablation a : kAllAblations) {
    if (name == ablation_name(a)) return a;
  }
  throw ConfigError("unknown ablation `" + name + "` (expected base, no-g-q, no-g or full)");
}

AblationSpec ablation_spec(Ablation a) {
  switch (a) {
    case Ablation::base: return {{false, false}, true};
    case Ablation::no_g_q: return {{true, false}, true};
    case Ablation::no_g: return {{true, false}, false};
    case Ablation::full: return {{true, true}, false};
  }
  throw ConfigError("unknown ablation");
}

void RunConfig::validate() const {
  dataset.validate();
  encoder.validate();
  loss.validate();
  if (encoder.grid != dataset.grid) throw ConfigError("encoder grid differs from dataset grid");
  if (encoder.channels != 1) throw ConfigError("synthetic data is single-channel");
  if (batch < 2) throw ConfigError("batch must be >= 2, got " + std::to_string(batch));
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (text_dim <= 0) throw ConfigError("text_dim must be > 0");
  if (cross_heads <= 0 || encoder.width % cross_heads != 0) throw ConfigError("width must be divisible by cross_heads");
  if (k_list.empty()) throw ConfigError("k_list must not be empty");
  for (const int k : k_list) {
    if (k <= 0) throw ConfigError("k_list entries must be positive");
  }
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.encoder = encoder;
  m.text_dim = text_dim;
  m.num_classes = dataset.num_classes;
  m.seen.assign(static_cast<std::size_t>(dataset.num_classes), false);
  for (int c = 0; c < dataset.seen_classes; ++c) m.seen[static_cast<std::size_t>(c)] = true;
  m.shared_encoders = shared_encoders;
  m.cross_heads = cross_heads;
  return m;
}

AdamConfig RunConfig::adam_config() const {
  AdamConfig a;
  a.learning_rate = learning_rate;
  a.weight_decay = weight_decay;
  return a;
}

KeyValues run_config_entries(const RunConfig& c) {
  KeyValues kv;
  for (auto& [k, v] : dataset_config_entries(c.dataset)) kv[k == "seed" ? "data_seed" : k] = v;
  kv["patch"] = std::to_string(c.encoder.patch);
  kv["width"] = std::to_string(c.encoder.width);
  kv["layers"] = std::to_string(c.encoder.layers);
  kv["heads"] = std::to_string(c.encoder.heads);
  kv["mlp_ratio"] = std::to_string(c.encoder.mlp_ratio);
  kv["text_dim"] = std::to_string(c.text_dim);
  kv["cross_heads"] = std::to_string(c.cross_heads);
  kv["shared_encoders"] = c.shared_encoders ? "true" : "false";
  kv["alpha"] = format_double(c.loss.alpha);
  kv["beta"] = format_double(c.loss.beta);
  kv["reduction"] = c.loss.reduction == Reduction::sum ? "sum" : "mean";
  kv["weight_mode"] = weight_mode_name(c.weight_mode);
  kv["ablation"] = ablation_name(c.ablation);
  kv["batch"] = std::to_string(c.batch);
  kv["epochs"] = std::to_string(c.epochs);
  kv["learning_rate"] = format_double(c.learning_rate);
  kv["weight_decay"] = format_double(c.weight_decay);
  kv["seed"] = std::to_string(c.seed);
  kv["out"] = c.out;
  kv["score_mode"] = score_mode_name(c.score_mode);
  std::string ks;
  for (const int k : c.k_list) ks += (ks.empty() ? "" : ",") + std::to_string(k);
  kv["k_list"] = ks;
  kv["f64"] = c.f64 ? "true" : "false";
  kv["strict_zs"] = c.strict_zero_shot ? "true" : "false";
  return kv;
}

RunConfig run_config_from_entries(const KeyValues& kv, RunConfig c) {
  const KeyValues known = run_config_entries(c);
  for (const auto& [k, v] : kv) {
    if (!known.contains(k)) throw ConfigError("unknown config key `" + k + "`");
  }
  KeyValues data_kv;
  for (const auto& [k, v] : dataset_config_entries(c.dataset)) {
    const std::string key = k == "seed" ? "data_seed" : k;
    data_kv[k] = kv.contains(key) ? kv.at(key) : v;
  }
  c.dataset = dataset_config_from_entries(data_kv);
  c.encoder.grid = c.dataset.grid;
  c.encoder.patch = get_int(kv, "patch", c.encoder.patch);
  c.encoder.width = get_int(kv, "width", c.encoder.width);
  c.encoder.layers = get_int(kv, "layers", c.encoder.layers);
  c.encoder.heads = get_int(kv, "heads", c.encoder.heads);
  c.encoder.mlp_ratio = get_int(kv, "mlp_ratio", c.encoder.mlp_ratio);
  c.text_dim = get_int(kv, "text_dim", c.text_dim);
  c.cross_heads = get_int(kv, "cross_heads", c.cross_heads);
  c.shared_encoders = get_bool(kv, "shared_encoders", c.shared_encoders);
  c.loss.alpha = get_double(kv, "alpha", c.loss.alpha);
  c.loss.beta = get_double(kv, "beta", c.loss.beta);
  if (kv.contains("reduction")) {
    const auto& r = kv.at("reduction");
    if (r != "sum" && r != "mean") throw ConfigError("reduction must be sum or mean, got `" + r + "`");
    c.loss.reduction = r == "sum" ? Reduction::sum : Reduction::mean;
  }
  if (kv.contains("weight_mode")) c.weight_mode = parse_weight_mode(kv.at("weight_mode"));
  if (kv.contains("ablation")) c.ablation = parse_ablation(kv.at("ablation"));
  c.batch = get_int(kv, "batch", c.batch);
  c.epochs = get_int(kv, "epochs", c.epochs);
  c.learning_rate = get_double(kv, "learning_rate", c.learning_rate);
  c.weight_decay = get_double(kv, "weight_decay", c.weight_decay);
  c.seed = static_cast<std::uint64_t>(get_int64(kv, "seed", static_cast<long long>(c.seed)));
  c.out = get_string(kv, "out", c.out);
  if (kv.contains("score_mode")) c.score_mode = parse_score_mode(kv.at("score_mode"));
  if (kv.contains("k_list")) {
    c.k_list.clear();
    for (const auto& part : split(kv.at("k_list"), ',')) {
      KeyValues one{{"k", trim(part)}};
      c.k_list.push_back(get_int(one, "k", 0));
    }
  }
  c.f64 = get_bool(kv, "f64", c.f64);
  c.strict_zero_shot = get_bool(kv, "strict_zs", c.strict_zero_shot);
  c.loss.triplet_only = ablation_spec(c.ablation).triplet_only;
  return c;
}

}  // namespace dmwa
