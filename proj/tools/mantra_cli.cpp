#include <fmt/format.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mantra/binary_io.hpp"
#include "mantra/config.hpp"
#include "mantra/pipeline.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kStageFailure = 3;

struct Args {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string data_dir;
  bool quiet = false;

  std::string k_list;
  bool no_refine = false, no_decoder = false, no_encdec = false;
  bool no_controller = false, no_rotation = false;
  std::optional<std::size_t> batch, runs;
  std::string svg, stream, output;
};

mantra::RunConfig build_config(const Args& a) {
  mantra::RunConfig c;
  if (!a.config_file.empty()) {
    c = mantra::load_config(a.config_file);
  } else {
    const std::filesystem::path saved =
        std::filesystem::path(a.out_dir.empty() ? "run" : a.out_dir) / "config.txt";
    if (std::filesystem::exists(saved)) c = mantra::load_config(saved);
  }
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw mantra::ConfigError(fmt::format("--set expects key=value, got '{}'", kv));
    }
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.seed) c.seed = *a.seed;
  if (!a.out_dir.empty()) c.out_dir = a.out_dir;
  if (!a.data_dir.empty()) c.data_dir = a.data_dir;
  if (!a.k_list.empty()) c.set("k_list", a.k_list);
  if (a.no_refine) c.no_refine = true;
  if (a.no_decoder) c.no_decoder = true;
  if (a.no_encdec) c.no_encdec = true;
  if (a.no_controller) c.no_controller = true;
  if (a.no_rotation) c.no_rotation_invariance = true;
  if (a.batch) c.online_batch = *a.batch;
  if (a.runs) c.online_runs = *a.runs;
  c.validate();
  return c;
}

void add_inference_flags(CLI::App* sub, Args& a) {
  sub->add_option("--k", a.k_list, "Comma-separated K values, e.g. 1,5,10,20");
  sub->add_flag("--no-refine", a.no_refine, "Pretrained model without refinement or decoder finetuning");
  sub->add_flag("--no-decoder", a.no_decoder, "Copy the stored futures instead of decoding");
  sub->add_flag("--no-encdec", a.no_encdec, "Nearest neighbours on past coordinates");
}

void add_training_flags(CLI::App* sub, Args& a) {
  sub->add_flag("--no-controller", a.no_controller, "Write every sample to memory");
  sub->add_flag("--no-rotation-invariance", a.no_rotation,
                "Random rotations instead of heading alignment");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MANTRA trajectory prediction with a persistent memory"};
  app.require_subcommand(1);
  app.fallthrough();
  Args a;
  app.add_option("-c,--config", a.config_file, "key=value configuration file")
      ->check(CLI::ExistingFile);
  app.add_option("--set", a.overrides, "Override one key, e.g. --set pretrain_epochs=100");
  app.add_option("--seed", a.seed, "Root random seed");
  app.add_option("-o,--out", a.out_dir, "Artifact directory (default: run)");
  app.add_option("--data", a.data_dir, "Dataset directory (default: <out>/data)");
  app.add_flag("-q,--quiet", a.quiet, "Only print errors");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  auto* pre = app.add_subcommand("pretrain", "Train the encoder-decoder as an autoencoder");
  auto* ctl = app.add_subcommand("train-controller", "Train the memory write controller");
  auto* fill = app.add_subcommand("fill-memory", "Write the training set through the controller");
  auto* ref = app.add_subcommand("train-refine", "Train refinement with decoder finetuning");
  auto* ev = app.add_subcommand("evaluate", "Score MANTRA and baselines on the test split");
  auto* onl = app.add_subcommand("online", "Incremental memory experiment");
  auto* ing = app.add_subcommand("ingest", "Stream tracks through the controller into memory");
  auto* ins = app.add_subcommand("inspect-memory", "Dump memory entries as CSV");
  auto* pip = app.add_subcommand("pipeline", "Run every stage from gen-data to evaluate");

  for (auto* sub : {gen, pre, ctl, fill, ref, onl, ing, pip}) add_training_flags(sub, a);
  add_inference_flags(ev, a);
  add_inference_flags(pip, a);
  onl->add_option("--batch", a.batch, "Samples ingested between measurements");
  onl->add_option("--runs", a.runs, "Shuffled runs");
  onl->add_option("--svg", a.svg, "Also write the curves as SVG");
  onl->add_option("--stream", a.stream, "Track CSV to stream (default: test split)")
      ->check(CLI::ExistingFile);
  ing->add_option("--stream", a.stream, "Track CSV to ingest")
      ->required()
      ->check(CLI::ExistingFile);
  ins->add_option("--output", a.output, "Write the CSV here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  const mantra::StageLog log = [&](const std::string& line) {
    if (!a.quiet) std::puts(line.c_str());
  };

  try {
    const auto config = build_config(a);
    if (gen->parsed()) {
      mantra::stage_gen_data(config, log);
    } else if (pre->parsed()) {
      mantra::stage_pretrain(config, log);
    } else if (ctl->parsed()) {
      mantra::stage_train_controller(config, log);
    } else if (fill->parsed()) {
      mantra::stage_fill_memory(config, log);
    } else if (ref->parsed()) {
      mantra::stage_train_refine(config, log);
    } else if (ev->parsed()) {
      const auto report = mantra::stage_evaluate(config, log);
      if (!a.quiet) std::fputs(mantra::format_report(report).c_str(), stdout);
    } else if (onl->parsed()) {
      mantra::OnlineStageOptions opts;
      if (!a.stream.empty()) opts.stream = a.stream;
      if (!a.svg.empty()) opts.svg = a.svg;
      mantra::stage_online(config, opts, log);
    } else if (ing->parsed()) {
      mantra::stage_ingest(config, a.stream, log);
    } else if (ins->parsed()) {
      const auto csv = mantra::stage_inspect_memory(config);
      if (a.output.empty()) {
        std::fputs(csv.c_str(), stdout);
      } else {
        mantra::write_text_file(a.output, csv);
      }
    } else if (pip->parsed()) {
      const auto report = mantra::pipeline_run(config, log);
      if (!a.quiet) std::fputs(mantra::format_report(report).c_str(), stdout);
    }
  } catch (const mantra::ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kConfigError;
  } catch (const mantra::StageError& e) {
    fmt::print(stderr, "stage failed: {}\n", e.what());
    return kStageFailure;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kStageFailure;
  }
  return 0;
}
