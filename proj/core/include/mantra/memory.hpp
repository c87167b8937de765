#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mantra/encdec.hpp"
#include "mantra/trajectory.hpp"

namespace mantra {

struct MemoryEntry {
  PastEncoding key;
  FutureEncoding value;
  std::uint64_t source_id = 0;
  std::int64_t write_epoch = 0;
  // Canonical future of the sample that produced the entry; read only by
  // the copy-the-future ablation and memory inspection.
  Path source_future;
};

class EmptyMemoryError : public std::runtime_error {
 public:
  EmptyMemoryError()
      : std::runtime_error("memory is empty; fill it (fill-memory) before reading") {}
};

// Append-only associative store of (past encoding, future encoding) pairs.
class MemoryStore {
 public:
  // Rejects zero-norm keys and width mismatches with std::invalid_argument.
  void append(MemoryEntry entry);
  void clear() { entries_.clear(); }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<MemoryEntry>& entries() const { return entries_; }
  const MemoryEntry& operator[](std::size_t i) const { return entries_[i]; }

  friend bool operator==(const MemoryStore&, const MemoryStore&);

 private:
  std::vector<MemoryEntry> entries_;
};

bool operator==(const MemoryEntry& a, const MemoryEntry& b);

// Cosine similarity of the query against every key, in entry order.
// Throws EmptyMemoryError on an empty store.
std::vector<double> similarity_scores(const PastEncoding& query, const MemoryStore& memory);

struct ScoredEntry {
  std::size_t index = 0;
  double score = 0.0;
};

// min(K, |M|) entries by non-increasing score; ties go to the older entry.
std::vector<ScoredEntry> read_top_k(const PastEncoding& query, const MemoryStore& memory,
                                    std::size_t k);

struct PredictionSet {
  std::vector<Path> futures;  // canonical frame
  std::vector<double> scores;  // non-increasing
  std::vector<std::size_t> entries;
};

enum class DecodeMode {
  kDecode,      // decode(pi_query, phi_j)
  kCopyFuture,  // stored source future of entry j, verbatim
};

PredictionSet predict(const Path& past, const MemoryStore& memory, std::size_t k,
                      const EncDecModel& model, DecodeMode mode = DecodeMode::kDecode);
PredictionSet predict_encoded(const PastEncoding& pi, const MemoryStore& memory, std::size_t k,
                              const EncDecModel& model, DecodeMode mode = DecodeMode::kDecode,
                              std::optional<std::uint64_t> exclude_source = std::nullopt);

// e = 1 - (1/F) * #{i : |pred_i - gt_i| <= th_horizon * i / F}, i = 1..F.
double miss_rate_error(std::span<const Vec2> prediction, std::span<const Vec2> ground_truth,
                       double th_horizon = 2.0);

// P(w) = sigmoid(weight * e + bias)
struct Controller {
  double weight = 0.0;
  double bias = 0.0;

  double forward(double e) const;
  bool writes(double e) const { return forward(e) > 0.5; }
};

// L_c = e * (1 - P) + (1 - e) * P. Throws std::invalid_argument when e is
// outside [0, 1] or P outside [0, 1].
double controller_loss(double e, double p);

struct WriteRule {
  double th_horizon = 2.0;
  bool write_all = false;  // controller ablation: every sample is written
};

struct ControllerTrainOptions {
  std::size_t epochs = 200;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  WriteRule rule;
};

struct ControllerTrainResult {
  Controller controller;
  std::vector<double> epoch_loss;          // mean L_c per epoch
  std::vector<std::size_t> memory_sizes;   // memory size at the end of each epoch
  std::vector<std::size_t> first_written;  // 1 when the first sample of the epoch was written
};

// Pre-computed encodings of a sample set under a frozen model.
struct EncodedSamples {
  std::vector<PastEncoding> pasts;
  std::vector<FutureEncoding> futures;
};
EncodedSamples encode_samples(const EncDecModel& model, std::span<const Sample> samples);

// Per epoch: clear memory; visit samples in a seeded shuffled order; predict
// with top-1 (e = 1 on empty memory); Adam step on L_c; write iff P(w) > 0.5
// or memory is empty. Returns the controller of the final epoch.
ControllerTrainResult train_controller(std::span<const Sample> samples, const EncDecModel& model,
                                       const ControllerTrainOptions& options,
                                       Controller initial = {});

// Single pass in dataset order with the same write rule. Source ids are
// `source_offset + sample index`.
MemoryStore fill_memory(std::span<const Sample> samples, const EncDecModel& model,
                        const Controller& controller, const WriteRule& rule = {},
                        std::uint64_t source_offset = 0);

struct IngestDecision {
  bool written = false;
  double error = 1.0;
  double write_probability = 0.0;
};

IngestDecision online_ingest(const Sample& sample, std::uint64_t source_id, MemoryStore& memory,
                             const EncDecModel& model, const Controller& controller,
                             const WriteRule& rule = {}, std::int64_t write_epoch = 0);

// Snapshot: ASCII "MEM <n> <width>\n", then little-endian u64 config hash,
// u32 future length F, and per entry: u64 source_id, width f64 key,
// width f64 value, i64 write_epoch, 2F f64 source future.
std::vector<std::uint8_t> encode_memory(const MemoryStore& memory, std::uint64_t config_hash);
MemoryStore decode_memory(std::span<const std::uint8_t> bytes,
                          std::optional<std::uint64_t> expected_hash = std::nullopt);
void save_memory(const std::filesystem::path& path, const MemoryStore& memory,
                 std::uint64_t config_hash);
MemoryStore load_memory(const std::filesystem::path& path,
                        std::optional<std::uint64_t> expected_hash = std::nullopt);

}  // namespace mantra
