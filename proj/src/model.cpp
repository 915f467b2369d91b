#include "dmwa/model.hpp"

#include <fstream>
#include <sstream>

#include "dmwa/keyvalue.hpp"
#include "dmwa/tensor_io.hpp"

namespace dmwa {

void ModelConfig::validate() const {
  encoder.validate();
  if (text_dim <= 0 || num_classes <= 0) throw ConfigError("model config: text_dim and num_classes must be positive");
  if (!seen.empty() && static_cast<int>(seen.size()) != num_classes) {
    throw ConfigError("model config: seen mask has " + std::to_string(seen.size()) + " entries for " +
                      std::to_string(num_classes) + " classes");
  }
  if (cross_heads <= 0 || encoder.width % cross_heads != 0) {
    throw ConfigError("model config: width " + std::to_string(encoder.width) +
                      " not divisible by cross_heads " + std::to_string(cross_heads));
  }
}

namespace {

// FNV-1a, so that initialization streams do not depend on std::hash.
std::uint64_t stream_id(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string join_seen(const std::vector<bool>& seen) {
  std::string out;
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (!seen[c]) continue;
    if (!out.empty()) out += ',';
    out += std::to_string(c);
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> model_config_entries(const ModelConfig& c) {
  KeyValues kv;
  kv["grid"] = std::to_string(c.encoder.grid);
  kv["patch"] = std::to_string(c.encoder.patch);
  kv["channels"] = std::to_string(c.encoder.channels);
  kv["width"] = std::to_string(c.encoder.width);
  kv["layers"] = std::to_string(c.encoder.layers);
  kv["heads"] = std::to_string(c.encoder.heads);
  kv["mlp_ratio"] = std::to_string(c.encoder.mlp_ratio);
  kv["text_dim"] = std::to_string(c.text_dim);
  kv["num_classes"] = std::to_string(c.num_classes);
  kv["seen_classes"] = join_seen(c.seen);
  kv["shared_encoders"] = c.shared_encoders ? "true" : "false";
  kv["cross_heads"] = std::to_string(c.cross_heads);
  return kv;
}

ModelConfig model_config_from_entries(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  c.encoder.grid = get_int(kv, "grid", c.encoder.grid);
  c.encoder.patch = get_int(kv, "patch", c.encoder.patch);
  c.encoder.channels = get_int(kv, "channels", c.encoder.channels);
  c.encoder.width = get_int(kv, "width", c.encoder.width);
  c.encoder.layers = get_int(kv, "layers", c.encoder.layers);
  c.encoder.heads = get_int(kv, "heads", c.encoder.heads);
  c.encoder.mlp_ratio = get_int(kv, "mlp_ratio", c.encoder.mlp_ratio);
  c.text_dim = get_int(kv, "text_dim", c.text_dim);
  c.num_classes = get_int(kv, "num_classes", c.num_classes);
  c.shared_encoders = get_bool(kv, "shared_encoders", c.shared_encoders);
  c.cross_heads = get_int(kv, "cross_heads", c.cross_heads);
  c.seen.assign(static_cast<std::size_t>(c.num_classes), false);
  const std::string seen = get_string(kv, "seen_classes", "");
  if (!seen.empty()) {
    for (const auto& item : split(seen, ',')) {
      const int id = get_int({{"seen_classes", item}}, "seen_classes", -1);
      if (id < 0 || id >= c.num_classes) throw ConfigError("seen_classes: class " + item + " out of range");
      c.seen[static_cast<std::size_t>(id)] = true;
    }
  }
  return c;
}

std::string config_diff(const ModelConfig& expected, const ModelConfig& actual) {
  const auto a = model_config_entries(expected);
  const auto b = model_config_entries(actual);
  std::string out;
  for (const auto& [k, v] : a) {
    const auto it = b.find(k);
    const std::string other = it == b.end() ? "<missing>" : it->second;
    if (other != v) out += k + ": expected " + v + ", got " + other + "\n";
  }
  return out;
}

template <typename Scalar>
Model<Scalar> Model<Scalar>::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  if (m.config.seen.empty()) m.config.seen.assign(static_cast<std::size_t>(config.num_classes), true);
  const Rng root(seed);
  auto stream = [&](const char* name) { return root.split(stream_id(name)); };
  Rng sketch_rng = stream("sketch");
  Rng image_rng = stream("image");
  Rng cross_rng = stream("cross");
  Rng text_rng = stream("text");
  m.weights.shared = config.shared_encoders;
  m.weights.sketch = init_encoder<Scalar>(config.encoder, sketch_rng);
  if (!config.shared_encoders) m.weights.image = init_encoder<Scalar>(config.encoder, image_rng);
  m.weights.cross = init_attention<Scalar>(config.encoder.width, cross_rng);
  m.weights.text = init_text<Scalar>(config.num_classes, config.text_dim, config.encoder.width, text_rng);
  return m;
}

template <typename Scalar>
std::vector<std::string> Model<Scalar>::parameter_names() const {
  std::vector<std::string> names;
  for_each_parameter(weights, "", [&](const std::string& name, const Matrix<Scalar>&) { names.push_back(name); });
  return names;
}

template <typename Scalar>
std::vector<Matrix<Scalar>*> Model<Scalar>::parameters() {
  std::vector<Matrix<Scalar>*> out;
  for_each_parameter(weights, "", [&](const std::string&, Matrix<Scalar>& m) { out.push_back(&m); });
  return out;
}

template <typename Scalar>
std::size_t Model<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for_each_parameter(weights, "", [&](const std::string&, const Matrix<Scalar>& m) { n += m.size(); });
  return n;
}

namespace {

template <typename Scalar>
EncoderWeights<Var<Scalar>> var_skeleton(const EncoderWeights<Matrix<Scalar>>& w) {
  EncoderWeights<Var<Scalar>> out;
  out.layers.resize(w.layers.size());
  return out;
}

}  // namespace

template <typename Scalar>
ModelWeights<Var<Scalar>> bind(Tape<Scalar>& tape, const ModelWeights<Matrix<Scalar>>& weights, bool track) {
  ModelWeights<Var<Scalar>> bound;
  bound.shared = weights.shared;
  bound.sketch = var_skeleton<Scalar>(weights.sketch);
  bound.image = var_skeleton<Scalar>(weights.image);
  std::vector<Var<Scalar>*> slots;
  for_each_parameter(bound, "", [&](const std::string&, Var<Scalar>& v) { slots.push_back(&v); });
  std::size_t i = 0;
  for_each_parameter(weights, "", [&](const std::string&, const Matrix<Scalar>& m) {
    *slots[i++] = track ? tape.variable(m) : tape.constant(m);
  });
  return bound;
}

template <typename Scalar>
std::vector<Matrix<Scalar>> collect_gradients(const Tape<Scalar>& tape, const ModelWeights<Var<Scalar>>& bound) {
  std::vector<Matrix<Scalar>> grads;
  for_each_parameter(bound, "", [&](const std::string&, const Var<Scalar>& v) { grads.push_back(tape.gradient(v)); });
  return grads;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& dir, const Model<Scalar>& model,
                     const OptimizerState<Scalar>* optimizer) {
  std::filesystem::create_directories(dir);
  KeyValues manifest = model_config_entries(model.config);
  manifest["format"] = "dmwa-checkpoint-1";
  std::size_t index = 0;
  const bool with_moments = optimizer && !optimizer->first_moment.empty();
  for_each_parameter(model.weights, "", [&](const std::string& name, const Matrix<Scalar>& m) {
    write_tensor(dir / (name + ".bin"), to_tensor(m));
    manifest["tensor." + name] = std::to_string(m.rows()) + "x" + std::to_string(m.cols());
    if (with_moments) {
      write_tensor(dir / ("adam.m." + name + ".bin"), to_tensor(optimizer->first_moment.at(index)));
      write_tensor(dir / ("adam.v." + name + ".bin"), to_tensor(optimizer->second_moment.at(index)));
    }
    ++index;
  });
  if (optimizer) {
    manifest["optimizer.step"] = std::to_string(optimizer->step);
    manifest["optimizer.learning_rate"] = format_double(optimizer->config.learning_rate);
    manifest["optimizer.weight_decay"] = format_double(optimizer->config.weight_decay);
    manifest["optimizer.moments"] = with_moments ? "true" : "false";
  }
  std::ofstream out(dir / "manifest");
  if (!out) throw Error("cannot write " + (dir / "manifest").string());
  write_key_values(out, manifest);
}

ModelConfig read_checkpoint_config(const std::filesystem::path& dir) {
  const auto manifest = read_key_values(dir / "manifest");
  if (get_string(manifest, "format", "") != "dmwa-checkpoint-1") {
    throw ConfigError((dir / "manifest").string() + ": not a checkpoint manifest");
  }
  return model_config_from_entries(manifest);
}

template <typename Scalar>
Model<Scalar> load_checkpoint(const std::filesystem::path& dir, OptimizerState<Scalar>* optimizer) {
  const auto manifest = read_key_values(dir / "manifest");
  const ModelConfig config = read_checkpoint_config(dir);
  Model<Scalar> model = Model<Scalar>::initialize(config, 0);
  const bool with_moments = optimizer && get_bool(manifest, "optimizer.moments", false);
  if (optimizer) {
    optimizer->step = get_int64(manifest, "optimizer.step", 0);
    optimizer->config.learning_rate =
        get_double(manifest, "optimizer.learning_rate", optimizer->config.learning_rate);
    optimizer->config.weight_decay = get_double(manifest, "optimizer.weight_decay", optimizer->config.weight_decay);
    optimizer->first_moment.clear();
    optimizer->second_moment.clear();
  }
  for_each_parameter(model.weights, "", [&](const std::string& name, Matrix<Scalar>& m) {
    const std::string shape = require(manifest, "tensor." + name);
    Matrix<Scalar> loaded = to_matrix<Scalar>(read_tensor(dir / (name + ".bin")));
    if (loaded.rows() != m.rows() || loaded.cols() != m.cols()) {
      throw DimensionError("checkpoint tensor " + name + " has shape " + shape_string(loaded) +
                           ", config implies " + shape_string(m));
    }
    m = std::move(loaded);
    if (with_moments) {
      optimizer->first_moment.push_back(to_matrix<Scalar>(read_tensor(dir / ("adam.m." + name + ".bin"))));
      optimizer->second_moment.push_back(to_matrix<Scalar>(read_tensor(dir / ("adam.v." + name + ".bin"))));
    }
  });
  return model;
}

#define DMWA_INSTANTIATE(S)                                                                          \
  template struct Model<S>;                                                                          \
  template ModelWeights<Var<S>> bind(Tape<S>&, const ModelWeights<Matrix<S>>&, bool);               \
  template std::vector<Matrix<S>> collect_gradients(const Tape<S>&, const ModelWeights<Var<S>>&);    \
  template void save_checkpoint(const std::filesystem::path&, const Model<S>&, const OptimizerState<S>*); \
  template Model<S> load_checkpoint(const std::filesystem::path&, OptimizerState<S>*);

DMWA_INSTANTIATE(float)
DMWA_INSTANTIATE(double)

#undef DMWA_INSTANTIATE

}  // namespace dmwa
