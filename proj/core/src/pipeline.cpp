#include "mantra/pipeline.hpp"

#include <fmt/format.h>

#include <filesystem>
#include <numbers>

#include "mantra/binary_io.hpp"
#include "mantra/checkpoint.hpp"
#include "mantra/dataset_io.hpp"
#include "mantra/layers.hpp"

namespace mantra {

namespace fs = std::filesystem;

namespace {

void say(const StageLog& log, const std::string& line) {
  if (log) log(line);
}

template <typename Fn>
auto run_stage(const char* stage, const RunConfig& config, Fn&& fn) -> decltype(fn()) {
  config.validate();
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void require(const fs::path& path, const char* producer) {
  if (!fs::exists(path)) {
    throw std::runtime_error(
        fmt::format("{} not found; run `{}` first", path.string(), producer));
  }
}

RunPaths paths_of(const RunConfig& config) { return {config.out_dir}; }

void write_run_config(const RunConfig& config) {
  write_text_file(paths_of(config).config(),
                  config.canonical_text() +
                      fmt::format("# artifact_hash={}\n", hex64(config.artifact_hash())));
}

WriteRule write_rule(const RunConfig& config) {
  WriteRule rule;
  rule.th_horizon = config.th_horizon;
  rule.write_all = config.no_controller;
  return rule;
}

EncDecModel load_encdec(const RunConfig& config) {
  const auto path = paths_of(config).encdec();
  require(path, "pretrain");
  return EncDecModel::load_from(load_checkpoint(path, config.artifact_hash()), config.encdec());
}

MemoryStore load_run_memory(const RunConfig& config) {
  const auto path = paths_of(config).memory();
  require(path, "fill-memory");
  return load_memory(path, config.artifact_hash());
}

}  // namespace

std::vector<Sample> make_samples(const std::vector<Trajectory>& tracks, const RunConfig& config,
                                 const std::string& stream) {
  auto samples = chunk_all(tracks, config.window());
  if (!config.no_rotation_invariance) return samples;
  Rng rng(sub_seed(config.seed, "rotation." + stream));
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  for (auto& s : samples) {
    const Path past = s.world_past();
    const Path future = s.world_future();
    Sample r = normalize_with_rotation(past, future, angle(rng));
    r.track_id = std::move(s.track_id);
    r.map_id = std::move(s.map_id);
    r.window_start = s.window_start;
    s = std::move(r);
  }
  return samples;
}

SampleSplits load_splits(const RunConfig& config) {
  SampleSplits out;
  const auto dir = config.data_path();
  require(dir / "train.csv", "gen-data");
  std::optional<std::uint64_t> expected;
  if (config.data_dir.empty()) expected = config.artifact_hash();
  out.dataset = load_dataset(dir, config.window(), expected);
  out.train = make_samples(out.dataset.train, config, "train");
  out.test = make_samples(out.dataset.test, config, "test");
  if (out.train.empty()) {
    throw std::runtime_error(fmt::format("{} yields no training windows of {} + {} steps",
                                         (dir / "train.csv").string(),
                                         config.window().past_len(),
                                         config.window().future_len()));
  }
  return out;
}

Controller load_controller(const fs::path& path, std::uint64_t expected_hash) {
  const Checkpoint ckpt = load_checkpoint(path, expected_hash);
  const auto& w = ckpt.get("controller.weight");
  const auto& b = ckpt.get("controller.bias");
  if (w.size() != 1 || b.size() != 1) {
    throw FormatError(path.string() + ": controller tensors must hold one value each");
  }
  return {w.at(0), b.at(0)};
}

void save_controller(const fs::path& path, const Controller& controller,
                     std::uint64_t config_hash) {
  Checkpoint ckpt;
  ckpt.config_hash = config_hash;
  ckpt.add("controller.weight", ad::Tensor::from({1}, {controller.weight}));
  ckpt.add("controller.bias", ad::Tensor::from({1}, {controller.bias}));
  save_checkpoint(path, ckpt);
}

RefinedArtifacts load_refined(const fs::path& path, const RunConfig& config) {
  const Checkpoint ckpt = load_checkpoint(path, config.artifact_hash());
  return {EncDecModel::load_from(ckpt, config.encdec()),
          RefinementModel::load_from(ckpt, config.refinement())};
}

void stage_gen_data(const RunConfig& config, const StageLog& log) {
  run_stage("gen-data", config, [&] {
    const auto ds = generate_synthetic_dataset(config.synthetic(), sub_seed(config.seed, "data"));
    const auto dir = config.data_path();
    save_dataset(dir, ds, config.artifact_hash(), config.seed);
    write_run_config(config);
    say(log, fmt::format("gen-data: {} train / {} test tracks, {} maps -> {}", ds.train.size(),
                         ds.test.size(), ds.maps.size(), dir.string()));
  });
}

TrainResult stage_pretrain(const RunConfig& config, const StageLog& log) {
  return run_stage("pretrain", config, [&] {
    const auto splits = load_splits(config);
    auto model = EncDecModel::create(config.encdec(), sub_seed(config.seed, "init.encdec"));
    auto opts = config.pretrain_options();
    if (log) {
      opts.on_epoch = [&](std::size_t epoch, double train, double val) {
        if (epoch % 250 == 0) say(log, fmt::format("  epoch {} train {:.5f} val {:.5f}", epoch, train, val));
      };
    }
    const auto result = pretrain_autoencoder(model, splits.train, opts);
    Checkpoint ckpt;
    ckpt.config_hash = config.artifact_hash();
    model.save_to(ckpt);
    save_checkpoint(paths_of(config).encdec(), ckpt);
    say(log, fmt::format("pretrain: {} epochs, best epoch {} loss {:.5f} m^2", result.epochs_run,
                         result.best_epoch, result.best_loss));
    return result;
  });
}

ControllerTrainResult stage_train_controller(const RunConfig& config, const StageLog& log) {
  return run_stage("train-controller", config, [&] {
    const auto splits = load_splits(config);
    const auto model = load_encdec(config);
    ControllerTrainOptions opts;
    opts.epochs = config.controller_epochs;
    opts.learning_rate = config.learning_rate;
    opts.seed = sub_seed(config.seed, "controller");
    opts.rule.th_horizon = config.th_horizon;
    const auto result = train_controller(splits.train, model, opts);
    save_controller(paths_of(config).controller(), result.controller, config.artifact_hash());
    say(log, fmt::format("train-controller: P(w|e=0) {:.4f}, P(w|e=1) {:.4f}, last epoch memory {}",
                         result.controller.forward(0.0), result.controller.forward(1.0),
                         result.memory_sizes.empty() ? 0 : result.memory_sizes.back()));
    return result;
  });
}

MemoryStore stage_fill_memory(const RunConfig& config, const StageLog& log) {
  return run_stage("fill-memory", config, [&] {
    const auto splits = load_splits(config);
    const auto model = load_encdec(config);
    Controller controller;
    if (!config.no_controller) {
      require(paths_of(config).controller(), "train-controller");
      controller = load_controller(paths_of(config).controller(), config.artifact_hash());
    }
    auto memory = fill_memory(splits.train, model, controller, write_rule(config));
    save_memory(paths_of(config).memory(), memory, config.artifact_hash());
    say(log, fmt::format("fill-memory: {} of {} samples written", memory.size(),
                         splits.train.size()));
    return memory;
  });
}

RefineTrainResult stage_train_refine(const RunConfig& config, const StageLog& log) {
  return run_stage("train-refine", config, [&] {
    const auto splits = load_splits(config);
    if (splits.dataset.maps.empty()) {
      throw std::runtime_error("the dataset has no semantic maps to refine against");
    }
    auto model = load_encdec(config);
    const auto memory = load_run_memory(config);
    auto refiner = RefinementModel::create(config.refinement(), config.seed);
    RefineTrainOptions opts;
    opts.epochs = config.refine_epochs;
    opts.learning_rate = config.learning_rate;
    opts.grad_clip = config.grad_clip;
    opts.validation_fraction = config.validation_fraction;
    opts.seed = sub_seed(config.seed, "refine.train");
    if (log) {
      opts.on_epoch = [&](std::size_t epoch, double train, double val) {
        if (epoch % 10 == 0) say(log, fmt::format("  epoch {} train {:.5f} val {:.5f}", epoch, train, val));
      };
    }
    const auto result =
        train_refinement(refiner, model, splits.train, splits.dataset.maps, memory, opts);
    Checkpoint ckpt;
    ckpt.config_hash = config.artifact_hash();
    model.save_to(ckpt);
    refiner.save_to(ckpt);
    save_checkpoint(paths_of(config).refined(), ckpt);
    say(log, fmt::format("train-refine: best epoch {} of {}", result.best_epoch,
                         result.train_loss.size()));
    return result;
  });
}

EvalReport stage_evaluate(const RunConfig& config, const StageLog& log) {
  return run_stage("evaluate", config, [&] {
    const auto splits = load_splits(config);
    if (splits.test.empty()) throw std::runtime_error("the test split has no windows");
    const auto paths = paths_of(config);
    const auto memory = load_run_memory(config);
    require(paths.refined(), "train-refine");
    const auto refined = load_refined(paths.refined(), config);
    const auto pretrained = load_encdec(config);
    const CoordinateNeighbors neighbors(splits.train);

    MantraArtifacts artifacts;
    artifacts.model = &refined.model;
    artifacts.memory = &memory;
    artifacts.maps = &splits.dataset.maps;
    artifacts.refiner = &refined.refiner;
    if (config.no_refine) {
      artifacts.model = &pretrained;
      artifacts.refiner = nullptr;
    }
    if (config.no_decoder) artifacts.decode = DecodeMode::kCopyFuture;
    if (config.no_encdec) {
      artifacts.neighbors = &neighbors;
      artifacts.refiner = nullptr;
    }

    EvalOptions opts;
    opts.k_list = config.k_list;
    opts.kalman = {config.kalman_sigma_q, config.kalman_sigma_r};
    opts.mlp.epochs = config.mlp_epochs;
    opts.mlp.learning_rate = config.mlp_learning_rate;
    opts.mlp.batch_size = config.batch_size;
    opts.seed = config.seed;
    opts.config_hash = config.artifact_hash();
    const auto report = evaluate(artifacts, splits.train, splits.test, config.window(), opts);
    write_text_file(paths.report(), format_report(report));
    say(log, fmt::format("evaluate: {} test samples -> {}", report.samples,
                         paths.report().string()));

    if (!config.no_refine && !config.no_decoder && !config.no_encdec) {
      const auto rows =
          ablation_matrix(artifacts, pretrained, splits.train, splits.test, config.window(), 5);
      write_text_file(paths.ablations(), format_ablations(rows, config.artifact_hash()));
      say(log, fmt::format("evaluate: ablations -> {}", paths.ablations().string()));
    }
    return report;
  });
}

OnlineCurve stage_online(const RunConfig& config, const OnlineStageOptions& options,
                         const StageLog& log) {
  return run_stage("online", config, [&] {
    const auto model = load_encdec(config);
    const auto memory0 = load_run_memory(config);
    Controller controller;
    if (!config.no_controller) {
      controller = load_controller(paths_of(config).controller(), config.artifact_hash());
    }
    std::vector<Sample> stream;
    if (options.stream) {
      const auto tracks = parse_tracks(read_text_file(*options.stream), config.sample_period);
      stream = make_samples(tracks, config, "online.stream");
    } else {
      stream = load_splits(config).test;
    }
    OnlineOptions opts;
    opts.batch = config.online_batch;
    opts.runs = config.online_runs;
    opts.k = 5;
    opts.seed = config.seed;
    opts.rule = write_rule(config);
    const auto curve = online_experiment(model, controller, memory0, stream, opts);
    const auto paths = paths_of(config);
    write_text_file(paths.online(), format_online_curve(curve, config.artifact_hash()));
    if (options.svg) write_text_file(*options.svg, online_curve_svg(curve));
    say(log, fmt::format("online: {} runs over {} samples, write fraction {:.3f} -> {}",
                         curve.runs.size(), stream.size(), curve.write_fraction(),
                         paths.online().string()));
    return curve;
  });
}

IngestSummary stage_ingest(const RunConfig& config, const fs::path& stream_path,
                           const StageLog& log) {
  return run_stage("ingest", config, [&] {
    const auto model = load_encdec(config);
    auto memory = load_run_memory(config);
    Controller controller;
    if (!config.no_controller) {
      controller = load_controller(paths_of(config).controller(), config.artifact_hash());
    }
    const auto tracks = parse_tracks(read_text_file(stream_path), config.sample_period);
    const auto samples = make_samples(tracks, config, "ingest");

    std::uint64_t next_source = std::uint64_t{1} << 40;
    std::int64_t epoch = 0;
    for (const auto& e : memory.entries()) {
      next_source = std::max(next_source, e.source_id + 1);
      epoch = std::max(epoch, e.write_epoch + 1);
    }
    IngestSummary summary;
    for (const auto& s : samples) {
      const auto d = online_ingest(s, next_source++, memory, model, controller,
                                   write_rule(config), epoch);
      summary.written += d.written ? 1 : 0;
    }
    summary.samples = samples.size();
    summary.memory_size = memory.size();
    save_memory(paths_of(config).memory(), memory, config.artifact_hash());
    say(log, fmt::format("ingest: {} of {} samples written, memory now {}", summary.written,
                         summary.samples, summary.memory_size));
    return summary;
  });
}

std::string inspect_memory(const MemoryStore& memory, const EncDecModel& model) {
  const std::size_t f = model.config().future_len;
  const std::size_t kw = model.config().past_hidden;
  const std::size_t vw = model.config().future_hidden;
  std::string out = "index,source_id,write_epoch";
  for (std::size_t i = 1; i <= f; ++i) out += fmt::format(",x{},y{}", i, i);
  for (std::size_t i = 0; i < kw; ++i) out += fmt::format(",key{}", i);
  for (std::size_t i = 0; i < vw; ++i) out += fmt::format(",value{}", i);
  out += '\n';
  for (std::size_t n = 0; n < memory.size(); ++n) {
    const auto& e = memory[n];
    out += fmt::format("{},{},{}", n, e.source_id, e.write_epoch);
    for (const auto& p : model.decode(e.key, e.value)) out += fmt::format(",{:.17g},{:.17g}", p.x, p.y);
    for (double v : e.key.code) out += fmt::format(",{:.17g}", v);
    for (double v : e.value.code) out += fmt::format(",{:.17g}", v);
    out += '\n';
  }
  return out;
}

std::string stage_inspect_memory(const RunConfig& config) {
  return run_stage("inspect-memory", config, [&] {
    return inspect_memory(load_run_memory(config), load_encdec(config));
  });
}

EvalReport pipeline_run(const RunConfig& config, const StageLog& log) {
  config.validate();
  if (config.data_dir.empty() || !fs::exists(config.data_path() / "train.csv")) {
    stage_gen_data(config, log);
  } else {
    write_run_config(config);
    say(log, fmt::format("gen-data: using {}", config.data_path().string()));
  }
  stage_pretrain(config, log);
  if (!config.no_controller) stage_train_controller(config, log);
  stage_fill_memory(config, log);
  stage_train_refine(config, log);
  return stage_evaluate(config, log);
}

}  // namespace mantra
