#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mantra/config.hpp"
#include "mantra/encdec.hpp"
#include "mantra/evaluation.hpp"
#include "mantra/memory.hpp"
#include "mantra/refinement.hpp"
#include "mantra/synthetic.hpp"

namespace mantra {

// A stage that could not complete. Artifacts written by earlier stages are
// left in place.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

using StageLog = std::function<void(const std::string&)>;

// File layout under RunConfig::out_dir.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.txt"; }
  std::filesystem::path encdec() const { return root / "encdec.ckpt"; }
  std::filesystem::path controller() const { return root / "controller.ckpt"; }
  std::filesystem::path memory() const { return root / "memory.mem"; }
  std::filesystem::path refined() const { return root / "refined.ckpt"; }
  std::filesystem::path report() const { return root / "report.csv"; }
  std::filesystem::path ablations() const { return root / "ablations.csv"; }
  std::filesystem::path online() const { return root / "online.csv"; }
};

struct SampleSplits {
  Dataset dataset;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

// Windows of the given tracks. With no_rotation_invariance every window is
// re-normalized with a seeded uniform random rotation instead of the heading
// alignment; `stream` names the rotation sub-seed.
std::vector<Sample> make_samples(const std::vector<Trajectory>& tracks, const RunConfig& config,
                                 const std::string& stream);

// Dataset from the configured data directory. Data produced by gen-data is
// hash-checked; an explicit data_dir is taken as external data.
SampleSplits load_splits(const RunConfig& config);

Controller load_controller(const std::filesystem::path& path, std::uint64_t expected_hash);
void save_controller(const std::filesystem::path& path, const Controller& controller,
                     std::uint64_t config_hash);

struct RefinedArtifacts {
  EncDecModel model;
  RefinementModel refiner;
};
RefinedArtifacts load_refined(const std::filesystem::path& path, const RunConfig& config);

// Stages. Each validates the config, reads the artifacts of earlier stages
// from out_dir, and writes its own.
void stage_gen_data(const RunConfig& config, const StageLog& log = {});
TrainResult stage_pretrain(const RunConfig& config, const StageLog& log = {});
ControllerTrainResult stage_train_controller(const RunConfig& config, const StageLog& log = {});
MemoryStore stage_fill_memory(const RunConfig& config, const StageLog& log = {});
RefineTrainResult stage_train_refine(const RunConfig& config, const StageLog& log = {});
// report.csv, plus ablations.csv when no inference switch is set.
EvalReport stage_evaluate(const RunConfig& config, const StageLog& log = {});

struct OnlineStageOptions {
  std::optional<std::filesystem::path> stream;  // track CSV; default: test split
  std::optional<std::filesystem::path> svg;
};
OnlineCurve stage_online(const RunConfig& config, const OnlineStageOptions& options,
                         const StageLog& log = {});

struct IngestSummary {
  std::size_t samples = 0;
  std::size_t written = 0;
  std::size_t memory_size = 0;
};
// Streams the tracks of a CSV file through the controller into memory.mem.
IngestSummary stage_ingest(const RunConfig& config, const std::filesystem::path& stream,
                           const StageLog& log = {});

// One row per entry: index, source id, write epoch, decoded future (x, y per
// step), key and value embeddings.
std::string inspect_memory(const MemoryStore& memory, const EncDecModel& model);
std::string stage_inspect_memory(const RunConfig& config);

// gen-data, pretrain, train-controller, fill-memory, train-refine, evaluate.
EvalReport pipeline_run(const RunConfig& config, const StageLog& log = {});

}  // namespace mantra
