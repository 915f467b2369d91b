#include "dmwa/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

namespace dmwa {

namespace {

enum : std::uint64_t { kOrderStream = 11, kQuadStream = 12 };

template <typename Scalar>
Matrix<Scalar> gather_grids(const Dataset& ds, std::span<const std::size_t> ids, bool sketches) {
  std::vector<const Grid*> grids;
  grids.reserve(ids.size());
  for (const auto i : ids) grids.push_back(sketches ? &ds.train[i].sketch : &ds.train[i].image);
  return stack_grids<Scalar>(grids);
}

std::vector<int> labels_of(const Dataset& ds, std::span<const std::size_t> ids) {
  std::vector<int> labels;
  labels.reserve(ids.size());
  for (const auto i : ids) labels.push_back(ds.train[i].class_id);
  return labels;
}

bool single_class(std::span<const int> labels) {
  return std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels.front(); });
}

template <typename Scalar>
void write_diagnostic(const std::filesystem::path& out_dir, const StepRecord& where,
                      std::span<const std::size_t> ids, std::span<const int> labels, const Model<Scalar>& model,
                      const std::string& message) {
  if (out_dir.empty()) return;
  std::ofstream out(out_dir / "diagnostic.txt");
  out << "error: " << message << "\nepoch: " << where.epoch << "\nstep: " << where.step << "\nsamples:";
  for (std::size_t k = 0; k < ids.size(); ++k) out << ' ' << ids[k] << ':' << labels[k];
  out << "\nparameters:\n";
  for_each_parameter(model.weights, "", [&](const std::string& name, const Matrix<Scalar>& m) {
    out << "  " << name << " finite=" << (all_finite(m) ? "yes" : "no") << " max_abs=" << m.cwiseAbs().maxCoeff()
        << '\n';
  });
}

void write_step_row(std::ostream& out, const StepRecord& s) {
  out << s.epoch << ',' << s.step << ',' << format_double(s.loss_o) << ',' << format_double(s.loss_d) << ','
      << format_double(s.loss_total) << ',' << format_double(s.fin_mean) << ',' << format_double(s.fin_min) << ','
      << format_double(s.fin_max) << '\n';
}

}  // namespace

StepSettings step_settings(const RunConfig& config) {
  const AblationSpec spec = ablation_spec(config.ablation);
  StepSettings s;
  s.mode = config.weight_mode;
  s.levels = spec.levels;
  s.loss = config.loss;
  s.loss.triplet_only = spec.triplet_only;
  return s;
}

template <typename Scalar>
StepForward<Scalar> forward_step(Tape<Scalar>& tape, const Model<Scalar>& model,
                                 const ModelWeights<Var<Scalar>>& bound, const Matrix<Scalar>& sketches,
                                 const Matrix<Scalar>& images, std::span<const int> labels,
                                 const StepSettings& settings, Rng& rng, const FrozenBatch<Scalar>* frozen) {
  const auto& enc = model.config.encoder;
  const Index seq = enc.sequence_length();
  const auto batch = static_cast<Index>(labels.size());
  const auto sketch_tokens = encode(tape, sketches, enc, bound.encoder(Modality::sketch));
  const auto image_tokens = encode(tape, images, enc, bound.encoder(Modality::image));

  Matrix<Scalar> text = Matrix<Scalar>::Zero(batch, enc.width);
  if (settings.levels.global) text = text_features(bound.text, labels, model.config.seen).value();

  StepForward<Scalar> out;
  out.weights = weigh_batch(sketch_tokens.value(), image_tokens.value(), text, model.weights.cross,
                            model.config.cross_heads, seq, settings.mode, settings.levels);
  out.quads = frozen ? frozen->quads : sample_quadruplets(labels, rng);
  const Vector<Scalar>& fin = frozen ? frozen->fin_list : out.weights.fin_list;

  const auto rows = global_rows(batch, seq);
  out.loss = weighted_quadruplet_loss(gather_rows(sketch_tokens, rows), gather_rows(image_tokens, rows), out.quads,
                                      fin, settings.loss);
  return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t samples, int batch, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng(seed).split(kOrderStream).split(static_cast<std::uint64_t>(epoch));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> batches;
  const auto b = static_cast<std::size_t>(batch);
  for (std::size_t start = 0; start + b <= samples; start += b) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + b));
  }
  return batches;
}

void write_training_csv(std::ostream& out, std::span<const StepRecord> steps) {
  out << "epoch,step,loss_o,loss_d,loss_total,fin_mean,fin_min,fin_max\n";
  for (const auto& s : steps) write_step_row(out, s);
}

template <typename Scalar>
TrainingRun<Scalar> train(const RunConfig& config, const Dataset& dataset, const TrainOptions& options) {
  config.validate();
  TrainingRun<Scalar> start{Model<Scalar>::initialize(config.model_config(), config.seed), {}, {}, 0};
  start.optimizer.config = config.adam_config();
  return train_from(std::move(start), config, dataset, options);
}

template <typename Scalar>
TrainingRun<Scalar> train_from(TrainingRun<Scalar> run, const RunConfig& config, const Dataset& dataset,
                               const TrainOptions& options) {
  config.validate();
  if (dataset.config.grid != config.encoder.grid) throw ConfigError("dataset grid differs from the model grid");
  const std::string diff = config_diff(run.model.config, config.model_config());
  if (!diff.empty()) throw ConfigError("model does not match the run config: " + diff);

  const StepSettings settings = step_settings(config);
  const auto& out_dir = options.out_dir;
  std::ofstream csv;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir / "checkpoints");
    std::ofstream cfg(out_dir / "run.cfg");
    write_key_values(cfg, run_config_entries(config));
    save_checkpoint(out_dir / "checkpoints" / "epoch-0", run.model, &run.optimizer);
    csv.open(out_dir / "train.csv");
    write_training_csv(csv, {});
  }

  long step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (const auto& ids : epoch_batches(dataset.train.size(), config.batch, config.seed, epoch)) {
      ++step;
      const auto labels = labels_of(dataset, ids);
      if (single_class(labels)) {
        ++run.skipped_batches;
        if (options.log) *options.log << "warning: epoch " << epoch << " step " << step << " holds a single class; skipped\n";
        continue;
      }
      StepRecord rec;
      rec.epoch = epoch;
      rec.step = step;
      try {
        Tape<Scalar> tape;
        const auto bound = bind(tape, run.model.weights, true);
        Rng quad_rng = Rng(config.seed).split(kQuadStream).split(static_cast<std::uint64_t>(step));
        const auto fwd = forward_step(tape, run.model, bound, gather_grids<Scalar>(dataset, ids, true),
                                      gather_grids<Scalar>(dataset, ids, false), labels, settings, quad_rng);
        const double total = static_cast<double>(fwd.loss.total.value()(0, 0));
        if (!std::isfinite(total)) throw NumericError("non-finite loss");
        tape.backward(fwd.loss.total);
        auto grads = collect_gradients(tape, bound);
        auto params = run.model.parameters();
        std::vector<const Matrix<Scalar>*> grad_ptrs;
        for (const auto& g : grads) grad_ptrs.push_back(&g);
        adam_step<Scalar>(params, grad_ptrs, run.optimizer);

        const auto& fin = fwd.weights.fin_list;
        rec.loss_o = static_cast<double>(fwd.loss.original_sum);
        rec.loss_d = static_cast<double>(fwd.loss.domain_sum);
        rec.loss_total = total;
        rec.fin_mean = static_cast<double>(fin.mean());
        rec.fin_min = static_cast<double>(fin.minCoeff());
        rec.fin_max = static_cast<double>(fin.maxCoeff());
      } catch (const NumericError& e) {
        write_diagnostic(out_dir, rec, ids, labels, run.model, e.what());
        throw NumericError("training aborted at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                           ": " + e.what());
      }
      run.steps.push_back(rec);
      if (csv.is_open()) write_step_row(csv, rec);
    }
    if (!out_dir.empty()) {
      const std::string name = "epoch-" + std::to_string(epoch);
      save_checkpoint(out_dir / "checkpoints" / name, run.model, &run.optimizer);
      const auto link = out_dir / "latest";
      std::filesystem::remove(link);
      std::filesystem::create_directory_symlink(std::filesystem::path("checkpoints") / name, link);
    }
    if (options.log && !run.steps.empty()) {
      double sum = 0.0;
      int n = 0;
      for (const auto& s : run.steps) {
        if (s.epoch == epoch) {
          sum += s.loss_total;
          ++n;
        }
      }
      if (n > 0) *options.log << "epoch " << epoch << " mean loss " << sum / n << '\n';
    }
  }
  return run;
}

template <typename Scalar>
std::vector<WeightRecord> dump_weights(const Model<Scalar>& model, const Dataset& dataset, const RunConfig& config,
                                       int epochs) {
  const StepSettings settings = step_settings(config);
  std::vector<WeightRecord> records;
  long step = 0;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    for (const auto& ids : epoch_batches(dataset.train.size(), config.batch, config.seed, epoch)) {
      ++step;
      const auto labels = labels_of(dataset, ids);
      Tape<Scalar> tape;
      const auto bound = bind(tape, model.weights, false);
      const auto& enc = model.config.encoder;
      const auto sketches = encode(tape, gather_grids<Scalar>(dataset, ids, true), enc, bound.encoder(Modality::sketch));
      const auto images = encode(tape, gather_grids<Scalar>(dataset, ids, false), enc, bound.encoder(Modality::image));
      Matrix<Scalar> text = Matrix<Scalar>::Zero(static_cast<Index>(ids.size()), enc.width);
      if (settings.levels.global) text = text_features(bound.text, labels, model.config.seen).value();
      const auto w = weigh_batch(sketches.value(), images.value(), text, model.weights.cross, model.config.cross_heads,
                                 enc.sequence_length(), settings.mode, settings.levels);
      for (std::size_t k = 0; k < ids.size(); ++k) {
        const auto i = static_cast<Index>(k);
        WeightRecord r;
        r.epoch = epoch;
        r.step = step;
        r.sample_id = ids[k];
        r.class_id = labels[k];
        r.corrupted = dataset.train[ids[k]].corrupted;
        r.local_score = w.local_scores.size() ? static_cast<double>(w.local_scores(i)) : 0.0;
        r.global_score = w.global_scores.size() ? static_cast<double>(w.global_scores(i)) : 0.0;
        r.local_weight = static_cast<double>(w.local_list(i));
        r.global_weight = static_cast<double>(w.global_list(i));
        r.final_weight = static_cast<double>(w.fin_list(i));
        records.push_back(r);
      }
    }
  }
  return records;
}

void write_weights_csv(std::ostream& out, std::span<const WeightRecord> records) {
  out << "epoch,step,sample_id,class_id,local_score,global_score,local_weight,global_weight,final_weight\n";
  for (const auto& r : records) {
    out << r.epoch << ',' << r.step << ',' << r.sample_id << ',' << r.class_id << ',' << format_double(r.local_score)
        << ',' << format_double(r.global_score) << ',' << format_double(r.local_weight) << ','
        << format_double(r.global_weight) << ',' << format_double(r.final_weight) << '\n';
  }
}

template <typename Scalar>
RetrievalReport evaluate(const Model<Scalar>& model, const Dataset& dataset, const RunConfig& config) {
  std::vector<int> query_labels, gallery_labels;
  for (const auto& s : dataset.queries) query_labels.push_back(s.class_id);
  for (const auto& s : dataset.gallery) gallery_labels.push_back(s.class_id);
  const auto queries = embed_split(stack_samples<Scalar>(dataset.queries), query_labels, model, Modality::sketch,
                                   config.strict_zero_shot);
  const auto gallery = embed_split(stack_samples<Scalar>(dataset.gallery), gallery_labels, model, Modality::image,
                                   config.strict_zero_shot);
  const auto scores = score_matrix<Scalar>(queries, gallery, model.weights.cross, model.config.cross_heads,
                                           config.score_mode);
  return rank_and_score(scores, query_labels, gallery_labels, config.k_list, "unseen");
}

template <typename Scalar>
std::vector<AblationResult> run_ablations(const RunConfig& config, const Dataset& dataset,
                                          const std::filesystem::path& out_dir, std::ostream* log) {
  std::vector<AblationResult> results;
  for (const Ablation a : kAllAblations) {
    RunConfig c = config;
    c.ablation = a;
    c.loss.triplet_only = ablation_spec(a).triplet_only;
    TrainOptions options;
    options.log = log;
    if (!out_dir.empty()) options.out_dir = out_dir / ablation_name(a);
    if (log) *log << "ablation " << ablation_name(a) << '\n';
    const auto run = train<Scalar>(c, dataset, options);
    auto report = evaluate(run.model, dataset, c);
    if (!options.out_dir.empty()) write_report(options.out_dir / "eval", report);
    results.push_back({a, std::move(report)});
  }
  return results;
}

void write_ablation_csv(std::ostream& out, std::span<const AblationResult> results, std::span<const int> k_list) {
  out << "ablation,mAP@all";
  for (const int k : k_list) out << ",mAP@" << k;
  for (const int k : k_list) out << ",Prec@" << k;
  out << '\n';
  for (const auto& r : results) {
    out << ablation_name(r.ablation) << ',' << format_double(r.report.map_all);
    for (const int k : k_list) out << ',' << format_double(r.report.map_at.at(k));
    for (const int k : k_list) out << ',' << format_double(r.report.precision_at.at(k));
    out << '\n';
  }
}

#define DMWA_INSTANTIATE(S)                                                                                      \
  template StepForward<S> forward_step(Tape<S>&, const Model<S>&, const ModelWeights<Var<S>>&, const Matrix<S>&, \
                                       const Matrix<S>&, std::span<const int>, const StepSettings&, Rng&,       \
                                       const FrozenBatch<S>*);                                                  \
  template TrainingRun<S> train(const RunConfig&, const Dataset&, const TrainOptions&);                          \
  template TrainingRun<S> train_from(TrainingRun<S>, const RunConfig&, const Dataset&, const TrainOptions&);     \
  template std::vector<WeightRecord> dump_weights(const Model<S>&, const Dataset&, const RunConfig&, int);      \
  template RetrievalReport evaluate(const Model<S>&, const Dataset&, const RunConfig&);                          \
  template std::vector<AblationResult> run_ablations<S>(const RunConfig&, const Dataset&,                        \
                                                        const std::filesystem::path&, std::ostream*);

DMWA_INSTANTIATE(float)
DMWA_INSTANTIATE(double)

}  // namespace dmwa
