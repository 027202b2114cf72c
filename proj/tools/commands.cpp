#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "changeflow/png_io.hpp"

namespace changeflow::cli {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<BinaryMask> masks_of(std::span<const ChangeSample> samples) {
  std::vector<BinaryMask> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.mask);
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

std::shared_ptr<const MaskCodec> open_codec(const std::string& spec) {
  if (spec.empty()) throw InvalidArgument("a codec checkpoint (or 'identity') is required");
  if (spec == "identity") return std::make_shared<IdentityCodec>();
  return load_codec(spec);
}

std::string step_name(int k) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "step_%02d.png", k);
  return buffer;
}

}  // namespace

std::uint64_t stage_seed(std::uint64_t master, Stage stage) {
  return mix_seed(master, static_cast<std::uint64_t>(stage));
}

void apply_master_seed(RunConfig& config, std::uint64_t master) {
  config.generator.seed = stage_seed(master, Stage::generator);
  config.codec.seed = stage_seed(master, Stage::codec);
  config.flow.seed = stage_seed(master, Stage::flow);
}

std::optional<std::uint64_t> resolve_seed(std::optional<std::uint64_t> flag) {
  if (flag) return flag;
  if (const char* env = std::getenv("CHANGEFLOW_SEED"); env != nullptr && *env != '\0') {
    try {
      std::size_t used = 0;
      const auto value = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
      return value;
    } catch (const std::exception&) {
      throw InvalidArgument(std::string("CHANGEFLOW_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  return std::nullopt;
}

RunConfig load_config_or_default(const fs::path& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

// ---------------------------------------------------------------------------

std::vector<ChangeSample> cmd_gen_data(const GenDataOptions& options) {
  if (options.out.empty()) throw InvalidArgument("gen-data: --out is required");
  options.config.generator.validate();
  auto samples = generate_dataset(options.config.generator, options.count);
  fs::create_directories(options.out);
  write_dataset(options.out, samples, options.config.generator);
  return samples;
}

TrainCodecSummary cmd_train_codec(const TrainCodecOptions& options) {
  if (options.out.empty()) throw InvalidArgument("train-codec: --out is required");
  const auto start = Clock::now();
  const auto train = load_split(options.data, Split::train);
  auto held = load_split(options.data, Split::val);
  if (options.report_masks > 0 && static_cast<int>(held.size()) > options.report_masks) held.resize(options.report_masks);
  const auto train_masks = masks_of(train);
  auto result = train_codec(train_masks, options.config.codec);
  save_codec(*result.codec, options.out);
  TrainCodecSummary summary;
  summary.train = result.report;
  if (!held.empty()) summary.held_out = roundtrip_report(*result.codec, masks_of(held));
  summary.epoch_loss = result.epoch_loss;
  summary.seconds = seconds_since(start);
  return summary;
}

TrainState cmd_train(const TrainCommandOptions& options) {
  if (options.out.empty()) throw InvalidArgument("train: --out is required");
  const auto samples = load_split(options.data, Split::train);
  TrainState state = options.resume.empty()
                         ? TrainState::create(options.config.flow, open_codec(options.codec))
                         : load_train_state(options.resume);
  if (options.resume.empty()) {
    state.model.codec_source = options.codec;
  } else if (options.config.flow.epochs > state.model.config.epochs) {
    // Resuming may extend the run; the schedule then spans the new total.
    state.model.config.epochs = options.config.flow.epochs;
  }
  TrainOptions train_options;
  train_options.checkpoint = options.out;
  train_options.loss_csv = options.loss_csv;
  const auto start = Clock::now();
  if (options.verbose) {
    train_options.on_epoch = [&](int epoch, double loss) {
      std::cerr << "epoch " << epoch << "/" << state.model.config.epochs << " loss " << loss << " step " << state.step
                << " elapsed " << static_cast<int>(seconds_since(start)) << "s\n";
    };
  }
  train(state, samples, train_options);
  return state;
}

std::vector<SoftMask> SplitPrediction::confidences() const {
  std::vector<SoftMask> out;
  out.reserve(results.size());
  for (const auto& r : results) out.push_back(r.confidence.data);
  return out;
}

SplitPrediction predict_split(const ChangeFlowModel& model, std::span<const ChangeSample> samples, int steps,
                              int repetitions, std::uint64_t master_seed, double theta, bool trace) {
  SplitPrediction p;
  std::vector<ImagePair> pairs;
  for (const auto& s : samples) {
    p.ids.push_back(s.id);
    pairs.push_back(s.pair);
    p.truth.push_back(s.mask);
  }
  p.results = predict_pairs(model, pairs, steps, repetitions, master_seed, trace ? &p.traces : nullptr);
  for (const auto& r : p.results) p.binary.push_back(binarize(r.confidence, theta));
  p.metrics = binary_prf(p.binary, p.truth);
  p.metrics.mae = mae(p.confidences(), p.truth);
  return p;
}

MetricsReport score_prefix(const SplitPrediction& prediction, int repetitions, double theta) {
  std::vector<BinaryMask> binary;
  std::vector<SoftMask> conf;
  for (const auto& r : prediction.results) {
    if (repetitions < 1 || repetitions > static_cast<int>(r.stack.masks.size())) {
      throw InvalidArgument("score_prefix: repetitions out of range");
    }
    conf.push_back(confidence_from_stack(std::span(r.stack.masks).first(static_cast<std::size_t>(repetitions))).data);
    binary.push_back(binarize(conf.back(), theta));
  }
  MetricsReport m = binary_prf(binary, prediction.truth);
  m.mae = mae(conf, prediction.truth);
  return m;
}

void cmd_infer(const InferOptions& options) {
  if (options.out.empty()) throw InvalidArgument("infer: --out is required");
  if (!fs::exists(options.model)) throw LoadError("model checkpoint not found: " + options.model.string());
  const ChangeFlowModel model = load_model(options.model);
  const int steps = options.steps.value_or(model.config.steps);
  const int reps = options.repetitions.value_or(model.config.repetitions);
  const double theta = options.threshold.value_or(model.config.threshold);
  if (steps < 1 || reps < 1) throw InvalidArgument("infer: steps and repetitions must be at least 1");
  if (!(theta > 0.0 && theta < 1.0)) throw InvalidArgument("infer: threshold must lie in (0, 1)");

  std::vector<std::string> ids;
  std::vector<ImagePair> pairs;
  if (!options.t1.empty() || !options.t2.empty()) {
    if (options.t1.empty() || options.t2.empty()) throw InvalidArgument("infer: --t1 and --t2 go together");
    ids.push_back(options.t1.stem().string());
    pairs.push_back({read_rgb_png(options.t1), read_rgb_png(options.t2)});
  } else if (!options.data.empty()) {
    for (auto& s : load_split(options.data, options.split)) {
      ids.push_back(s.id);
      pairs.push_back(std::move(s.pair));
    }
  } else {
    throw InvalidArgument("infer: give --t1/--t2 or --data");
  }

  std::vector<IntermediateTrace> traces;
  const auto results = predict_pairs(model, pairs, steps, reps, options.seed, options.trace ? &traces : nullptr);
  for (std::size_t i = 0; i < results.size(); ++i) {
    write_mask_png(options.out / "mask" / (ids[i] + ".png"), binarize(results[i].confidence, theta));
    write_soft_png(options.out / "conf" / (ids[i] + ".png"), results[i].confidence.data);
    if (options.trace) {
      const auto& trace = traces[i].steps;
      for (std::size_t k = 0; k < trace.size(); ++k) {
        write_soft_png(options.out / "trace" / ids[i] / step_name(static_cast<int>(k) + 1), trace[k]);
      }
    }
  }
  nlohmann::json sidecar = {{"model", options.model.string()},
                            {"steps", steps},
                            {"repetitions", reps},
                            {"threshold", theta},
                            {"master_seed", options.seed},
                            {"repetition_seeds", results.empty() ? std::vector<std::uint64_t>{}
                                                                 : results.front().stack.seeds},
                            {"trace", options.trace},
                            {"ids", ids}};
  if (!options.data.empty()) {
    sidecar["data"] = options.data.string();
    sidecar["split"] = to_string(options.split);
  } else {
    sidecar["t1"] = options.t1.string();
    sidecar["t2"] = options.t2.string();
  }
  write_json(options.out / "sidecar.json", sidecar);
}

EvalSummary cmd_eval(const EvalOptions& options) {
  if (options.pred.empty() || options.gt.empty() || options.out.empty()) {
    throw InvalidArgument("eval: --pred, --gt and --out are required");
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(options.gt)) {
    if (entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw LoadError("eval: no ground-truth masks in " + options.gt.string());
  std::vector<BinaryMask> pred, gt;
  std::vector<SoftMask> conf;
  for (const auto& f : files) {
    gt.push_back(read_mask_png(f));
    pred.push_back(read_mask_png(options.pred / f.filename()));
    if (!options.conf.empty()) {
      const auto g = read_gray_png(options.conf / f.filename());
      SoftMask c(Shape{g.height, g.width, 1});
      for (std::size_t i = 0; i < g.pixels.size(); ++i) c.values()[i] = g.pixels[i] / 255.0f;
      conf.push_back(std::move(c));
    }
  }
  EvalSummary s;
  s.metrics = binary_prf(pred, gt);
  if (!conf.empty()) {
    s.metrics.mae = mae(conf, gt);
  } else {
    std::vector<SoftMask> hard;
    for (const auto& p : pred) hard.push_back(to_soft(p));
    s.metrics.mae = mae(hard, gt);
  }
  s.coherence = coherence_report(pred, gt, options.min_area, options.connectivity);
  write_metrics_csv(options.out / "metrics.csv", s.metrics);
  write_coherence_csv(options.out / "coherence.csv", s.coherence);
  if (!conf.empty()) {
    s.error_auroc = error_auroc(conf, pred, gt);
    s.sweep = threshold_sweep(conf, gt, options.thetas);
    write_sweep_csv(options.out / "sweep.csv", s.sweep);
  }
  return s;
}

std::vector<AblationRow> cmd_ablate(const AblateOptions& options) {
  std::vector<std::string> values = options.values;
  if (values.empty()) {
    if (options.axis == "diff") values = {"abs_diff", "signed_diff", "concat"};
    else if (options.axis == "norm") values = {"layer_norm", "l2_norm", "none"};
    else if (options.axis == "t_sampling") values = {"logit_normal", "uniform"};
    else if (options.axis == "resize") values = {"bicubic", "bilinear", "nearest"};
    else throw InvalidArgument("ablate: unknown axis '" + options.axis + "'");
  }
  // Validate every variant before any training starts.
  std::vector<FlowConfig> configs;
  for (const auto& v : values) {
    FlowConfig c = options.config.flow;
    if (options.axis == "diff") c.cond.diff = parse_diff_mode(v);
    else if (options.axis == "norm") c.cond.norm = parse_norm_mode(v);
    else if (options.axis == "t_sampling") c.t_sampling = parse_time_sampling(v);
    else if (options.axis == "resize") c.cond.resize = parse_resize_mode(v);
    else throw InvalidArgument("ablate: unknown axis '" + options.axis + "'");
    c.validate();
    configs.push_back(c);
  }
  const auto codec = open_codec(options.codec);
  const auto train_samples = load_split(options.data, Split::train);
  const auto test_samples = load_split(options.data, Split::test);
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) {
    TrainState state = TrainState::create(configs[i], codec);
    train(state, train_samples);
    const auto& c = state.model.config;
    const auto p = predict_split(state.model, test_samples, c.steps, c.repetitions,
                                 stage_seed(c.seed, Stage::inference), c.threshold);
    rows.push_back({options.axis, values[i], p.metrics.precision, p.metrics.recall, p.metrics.f1,
                    state.epoch_loss.empty() ? 0.0 : state.epoch_loss.back()});
    std::cerr << "ablate " << options.axis << "=" << values[i] << " f1 " << p.metrics.f1 << "\n";
  }
  if (!options.out_csv.empty()) {
    if (options.out_csv.has_parent_path()) fs::create_directories(options.out_csv.parent_path());
    std::ofstream out(options.out_csv);
    if (!out) throw Error("cannot write " + options.out_csv.string());
    out << "axis,value,precision,recall,f1,final_loss\n";
    for (const auto& r : rows) {
      out << r.axis << ',' << r.value << ',' << r.precision << ',' << r.recall << ',' << r.f1 << ',' << r.final_loss
          << '\n';
    }
  }
  return rows;
}

std::vector<BenchRow> cmd_bench(const BenchOptions& options) {
  if (options.timed_runs < 1 || options.warmup_runs < 0) throw InvalidArgument("bench: run counts out of range");
  const ChangeFlowModel model = load_model(options.model);
  auto samples = load_split(options.data, options.split);
  if (samples.empty()) throw LoadError("bench: empty split");
  if (options.eval_pairs > 0 && static_cast<int>(samples.size()) > options.eval_pairs) {
    samples.resize(static_cast<std::size_t>(options.eval_pairs));
  }
  const double theta = model.config.threshold;
  const ImagePair& probe = samples.front().pair;

  auto time_config = [&](int steps, int reps) {
    for (int i = 0; i < options.warmup_runs; ++i) ensemble_predict(model, probe, steps, reps, options.seed);
    std::vector<double> ms;
    for (int i = 0; i < options.timed_runs; ++i) {
      const auto start = Clock::now();
      ensemble_predict(model, probe, steps, reps, options.seed);
      ms.push_back(seconds_since(start) * 1000.0);
    }
    std::nth_element(ms.begin(), ms.begin() + ms.size() / 2, ms.end());
    double median = ms[ms.size() / 2];
    if (ms.size() % 2 == 0) {
      median = (median + *std::max_element(ms.begin(), ms.begin() + ms.size() / 2)) / 2.0;
    }
    return median;
  };

  // One stack at the largest N serves every N in the repetition sweep.
  const int max_reps = std::max(*std::max_element(options.repetition_values.begin(), options.repetition_values.end()),
                                options.fixed_repetitions);
  const SplitPrediction wide = predict_split(model, samples, options.fixed_steps, max_reps, options.seed, theta);

  std::vector<BenchRow> rows;
  for (int steps : options.step_values) {
    BenchRow r{"steps", steps, options.fixed_repetitions, time_config(steps, options.fixed_repetitions), 0.0};
    r.f1 = steps == options.fixed_steps
               ? score_prefix(wide, options.fixed_repetitions, theta).f1
               : predict_split(model, samples, steps, options.fixed_repetitions, options.seed, theta).metrics.f1;
    rows.push_back(r);
  }
  for (int reps : options.repetition_values) {
    rows.push_back({"repetitions", options.fixed_steps, reps, time_config(options.fixed_steps, reps),
                    score_prefix(wide, reps, theta).f1});
  }
  if (!options.out_csv.empty()) {
    if (options.out_csv.has_parent_path()) fs::create_directories(options.out_csv.parent_path());
    std::ofstream out(options.out_csv);
    if (!out) throw Error("cannot write " + options.out_csv.string());
    out << "sweep,steps,repetitions,median_ms_per_image,f1\n";
    for (const auto& r : rows) {
      out << r.sweep << ',' << r.steps << ',' << r.repetitions << ',' << r.median_ms << ',' << r.f1 << '\n';
    }
  }
  return rows;
}

SweepSummary cmd_sweep(const SweepOptions& options) {
  const ChangeFlowModel model = load_model(options.model);
  const auto samples = load_split(options.data, options.split);
  if (samples.empty()) throw LoadError("sweep: empty split");
  const int steps = options.steps.value_or(model.config.steps);
  const int reps = options.repetitions.value_or(model.config.repetitions);
  const auto p = predict_split(model, samples, steps, reps, options.seed, model.config.threshold);
  SweepSummary s;
  s.rows = threshold_sweep(p.confidences(), p.truth, options.thetas);
  s.best = best_threshold(s.rows);
  for (int k = 1; k <= reps; ++k) {
    std::vector<BinaryMask> voted;
    for (const auto& r : p.results) voted.push_back(vote_binarize(r.stack.masks, k));
    const auto m = binary_prf(voted, p.truth);
    s.vote_rows.push_back({static_cast<double>(k) / reps, m.precision, m.recall, m.f1});
  }
  if (!options.out_csv.empty()) write_sweep_csv(options.out_csv, s.rows);
  return s;
}

// ---------------------------------------------------------------------------
// Argument parsing

namespace {

struct Overrides {
  std::optional<int> steps, reps, epochs, batch_size, image_size, objects_min, objects_max;
  std::optional<double> threshold, lr, change_fraction, change_prob;
  std::optional<std::string> t_sampling, diff_mode, norm_mode, resize_mode;

  void apply(RunConfig& c) const {
    if (steps) c.flow.steps = *steps;
    if (reps) c.flow.repetitions = *reps;
    if (epochs) c.flow.epochs = *epochs;
    if (batch_size) c.flow.batch_size = *batch_size;
    if (threshold) c.flow.threshold = *threshold;
    if (lr) c.flow.learning_rate = *lr;
    if (t_sampling) c.flow.t_sampling = parse_time_sampling(*t_sampling);
    if (diff_mode) c.flow.cond.diff = parse_diff_mode(*diff_mode);
    if (norm_mode) c.flow.cond.norm = parse_norm_mode(*norm_mode);
    if (resize_mode) c.flow.cond.resize = parse_resize_mode(*resize_mode);
    if (image_size) {
      c.flow.image_size = *image_size;
      c.generator.image_size = *image_size;
    }
    if (change_fraction) c.generator.target_fraction = *change_fraction;
    if (change_prob) c.generator.change_prob = *change_prob;
    if (objects_min) c.generator.min_objects = *objects_min;
    if (objects_max) c.generator.max_objects = *objects_max;
  }
};

void add_flow_flags(CLI::App* app, Overrides& o) {
  app->add_option("--steps", o.steps, "Euler steps T");
  app->add_option("--reps", o.reps, "Ensemble repetitions N");
  app->add_option("--threshold", o.threshold, "Binarisation threshold");
  app->add_option("--epochs", o.epochs, "Training epochs");
  app->add_option("--batch-size", o.batch_size, "Training batch size");
  app->add_option("--lr", o.lr, "Velocity-model learning rate");
  app->add_option("--t-sampling", o.t_sampling, "logit_normal or uniform");
  app->add_option("--diff-mode", o.diff_mode, "abs_diff, signed_diff or concat");
  app->add_option("--norm-mode", o.norm_mode, "layer_norm, l2_norm or none");
  app->add_option("--resize-mode", o.resize_mode, "bicubic, bilinear or nearest");
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Change detection with rectified flow on bi-temporal image pairs"};
  app.require_subcommand(1);
  app.fallthrough();

  fs::path config_path;
  std::optional<std::uint64_t> seed_flag;
  Overrides o;
  app.add_option("--config", config_path, "JSON config with flow/generator/codec sections")->check(CLI::ExistingFile);
  app.add_option("--seed", seed_flag, "Master seed (falls back to CHANGEFLOW_SEED)");

  auto prepare = [&]() {
    RunConfig c = load_config_or_default(config_path);
    if (const auto seed = resolve_seed(seed_flag)) apply_master_seed(c, *seed);
    o.apply(c);
    c.generator.validate();
    c.flow.validate();
    return c;
  };
  auto inference_seed = [&](std::uint64_t flow_seed) { return stage_seed(flow_seed, Stage::inference); };

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  GenDataOptions gen_opts;
  gen->add_option("--out", gen_opts.out, "Dataset root")->required();
  gen->add_option("--count", gen_opts.count, "Number of pairs");
  gen->add_option("--change-fraction", o.change_fraction, "Target changed-pixel fraction");
  gen->add_option("--change-prob", o.change_prob, "Per-object change probability");
  gen->add_option("--min-objects", o.objects_min);
  gen->add_option("--max-objects", o.objects_max);
  gen->add_option("--image-size", o.image_size);

  // train-codec
  auto* tc = app.add_subcommand("train-codec", "Train the mask autoencoder");
  TrainCodecOptions tc_opts;
  tc->add_option("--data", tc_opts.data, "Dataset root")->required();
  tc->add_option("--out", tc_opts.out, "Codec checkpoint")->required();
  std::optional<int> codec_epochs;
  std::optional<std::string> codec_kind;
  tc->add_option("--epochs", codec_epochs);
  tc->add_option("--kind", codec_kind, "conv or identity");

  // train
  auto* tr = app.add_subcommand("train", "Train the flow model");
  TrainCommandOptions tr_opts;
  tr->add_option("--data", tr_opts.data, "Dataset root")->required();
  tr->add_option("--codec", tr_opts.codec, "Codec checkpoint or 'identity'");
  tr->add_option("--out", tr_opts.out, "Training checkpoint")->required();
  tr->add_option("--loss-csv", tr_opts.loss_csv, "Per-epoch loss log");
  tr->add_option("--resume", tr_opts.resume, "Continue from a training checkpoint")->check(CLI::ExistingFile);
  add_flow_flags(tr, o);

  // infer
  auto* inf = app.add_subcommand("infer", "Predict change masks");
  InferOptions inf_opts;
  std::string inf_split = "test";
  inf->add_option("--model", inf_opts.model, "Model checkpoint")->required();
  inf->add_option("--out", inf_opts.out, "Output directory")->required();
  inf->add_option("--t1", inf_opts.t1, "First image");
  inf->add_option("--t2", inf_opts.t2, "Second image");
  inf->add_option("--data", inf_opts.data, "Dataset root");
  inf->add_option("--split", inf_split, "train, val or test");
  inf->add_option("--steps", inf_opts.steps);
  inf->add_option("--reps", inf_opts.repetitions);
  inf->add_option("--threshold", inf_opts.threshold);
  inf->add_flag("--trace", inf_opts.trace, "Write the decoded state after every step");

  // eval
  auto* ev = app.add_subcommand("eval", "Score predicted masks");
  EvalOptions ev_opts;
  fs::path ev_data;
  std::string ev_split = "test";
  int connectivity = 4;
  ev->add_option("--pred", ev_opts.pred, "Predicted mask directory")->required();
  ev->add_option("--conf", ev_opts.conf, "Confidence PNG directory");
  ev->add_option("--gt", ev_opts.gt, "Ground-truth mask directory");
  ev->add_option("--data", ev_data, "Dataset root (ground truth from <data>/<split>/mask)");
  ev->add_option("--split", ev_split);
  ev->add_option("--out", ev_opts.out, "Report directory")->required();
  ev->add_option("--min-area", ev_opts.min_area);
  ev->add_option("--connectivity", connectivity)->check(CLI::IsMember({4, 8}));

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train and score conditioning / sampling variants");
  AblateOptions ab_opts;
  ab->add_option("--data", ab_opts.data)->required();
  ab->add_option("--codec", ab_opts.codec)->required();
  ab->add_option("--out", ab_opts.out_csv, "Comparison CSV")->required();
  ab->add_option("--axis", ab_opts.axis, "diff, norm, t_sampling or resize");
  ab->add_option("--values", ab_opts.values, "Subset of values along the axis");
  add_flow_flags(ab, o);

  // bench
  auto* be = app.add_subcommand("bench", "Speed / accuracy sweep over steps and repetitions");
  BenchOptions be_opts;
  std::string be_split = "test";
  be->add_option("--model", be_opts.model)->required();
  be->add_option("--data", be_opts.data)->required();
  be->add_option("--split", be_split);
  be->add_option("--out", be_opts.out_csv, "Timing CSV")->required();
  be->add_option("--runs", be_opts.timed_runs);
  be->add_option("--warmup", be_opts.warmup_runs);
  be->add_option("--eval-pairs", be_opts.eval_pairs, "Pairs scored for F1 (0 = all)");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Threshold sweep on a split");
  SweepOptions sw_opts;
  std::string sw_split = "val";
  sw->add_option("--model", sw_opts.model)->required();
  sw->add_option("--data", sw_opts.data)->required();
  sw->add_option("--split", sw_split);
  sw->add_option("--out", sw_opts.out_csv, "Sweep CSV")->required();
  sw->add_option("--thetas", sw_opts.thetas);
  sw->add_option("--steps", sw_opts.steps);
  sw->add_option("--reps", sw_opts.repetitions);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) {
      gen_opts.config = prepare();
      const auto samples = cmd_gen_data(gen_opts);
      std::cout << "wrote " << samples.size() << " pairs to " << gen_opts.out.string() << " (changed fraction "
                << changed_fraction(samples) << ")\n";
    } else if (tc->parsed()) {
      tc_opts.config = prepare();
      if (codec_epochs) tc_opts.config.codec.epochs = *codec_epochs;
      if (codec_kind) tc_opts.config.codec.kind = *codec_kind;
      const auto s = cmd_train_codec(tc_opts);
      auto show = [](const RoundTripReport& r) {
        return (r.f1 ? std::to_string(*r.f1) : std::string("undefined")) + " mae " + std::to_string(r.mae);
      };
      std::cout << "codec written to " << tc_opts.out.string() << "; train f1 " << show(s.train) << "; held-out f1 "
                << show(s.held_out) << "; " << s.seconds << " s\n";
    } else if (tr->parsed()) {
      tr_opts.config = prepare();
      if (tr_opts.resume.empty() && tr_opts.codec.empty()) throw InvalidArgument("train: --codec is required");
      const auto state = cmd_train(tr_opts);
      std::cout << "checkpoint " << tr_opts.out.string() << " after " << state.step << " steps\n";
    } else if (inf->parsed()) {
      const auto seed = resolve_seed(seed_flag);
      inf_opts.seed = seed ? inference_seed(*seed) : inference_seed(0);
      inf_opts.split = parse_split(inf_split);
      cmd_infer(inf_opts);
      std::cout << "predictions written to " << inf_opts.out.string() << "\n";
    } else if (ev->parsed()) {
      if (ev_opts.gt.empty()) {
        if (ev_data.empty()) throw InvalidArgument("eval: give --gt or --data");
        ev_opts.gt = ev_data / to_string(parse_split(ev_split)) / "mask";
      }
      ev_opts.connectivity = connectivity == 8 ? Connectivity::eight : Connectivity::four;
      const auto s = cmd_eval(ev_opts);
      std::cout << "precision " << s.metrics.precision << " recall " << s.metrics.recall << " f1 " << s.metrics.f1
                << " mae " << s.metrics.mae << " cc_dev " << s.coherence.cc_deviation << " hole_dev "
                << s.coherence.hole_deviation;
      if (s.error_auroc) std::cout << " error_auroc " << *s.error_auroc;
      std::cout << "\n";
    } else if (ab->parsed()) {
      ab_opts.config = prepare();
      const auto rows = cmd_ablate(ab_opts);
      std::cout << "wrote " << rows.size() << " rows to " << ab_opts.out_csv.string() << "\n";
    } else if (be->parsed()) {
      const auto seed = resolve_seed(seed_flag);
      be_opts.seed = inference_seed(seed.value_or(0));
      be_opts.split = parse_split(be_split);
      for (const auto& r : cmd_bench(be_opts)) {
        std::cout << r.sweep << " T=" << r.steps << " N=" << r.repetitions << " " << r.median_ms << " ms f1 " << r.f1
                  << "\n";
      }
    } else if (sw->parsed()) {
      const auto seed = resolve_seed(seed_flag);
      sw_opts.seed = inference_seed(seed.value_or(0));
      sw_opts.split = parse_split(sw_split);
      const auto s = cmd_sweep(sw_opts);
      std::cout << "best theta " << s.best.theta << " f1 " << s.best.f1 << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace changeflow::cli
