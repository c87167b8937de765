#include "mantra/memory.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>

#include "mantra/binary_io.hpp"
#include "mantra/checkpoint.hpp"
#include "mantra/layers.hpp"
#include "mantra/optim.hpp"

namespace mantra {

namespace {

double l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

bool operator==(const MemoryEntry& a, const MemoryEntry& b) {
  return a.key == b.key && a.value == b.value && a.source_id == b.source_id &&
         a.write_epoch == b.write_epoch && a.source_future == b.source_future;
}

bool operator==(const MemoryStore& a, const MemoryStore& b) { return a.entries_ == b.entries_; }

void MemoryStore::append(MemoryEntry entry) {
  if (entry.key.width() == 0 || entry.value.width() == 0) {
    throw std::invalid_argument("memory entry with an empty key or value");
  }
  if (!entries_.empty()) {
    const auto& first = entries_.front();
    if (entry.key.width() != first.key.width() || entry.value.width() != first.value.width()) {
      throw std::invalid_argument(fmt::format(
          "memory entry widths ({}, {}) differ from the store's ({}, {})", entry.key.width(),
          entry.value.width(), first.key.width(), first.value.width()));
    }
  }
  if (!entry.key.finite() || !entry.value.finite()) {
    throw std::invalid_argument("memory entry holds a non-finite encoding");
  }
  if (l2(entry.key.code) == 0.0) {
    throw std::invalid_argument("memory key has zero norm and cannot be addressed");
  }
  entries_.push_back(std::move(entry));
}

std::vector<double> similarity_scores(const PastEncoding& query, const MemoryStore& memory) {
  if (memory.empty()) throw EmptyMemoryError();
  if (query.width() != memory[0].key.width()) {
    throw std::invalid_argument(fmt::format("query width {} does not match key width {}",
                                            query.width(), memory[0].key.width()));
  }
  const double qn = l2(query.code);
  if (qn == 0.0) throw std::invalid_argument("query encoding has zero norm");
  std::vector<double> scores;
  scores.reserve(memory.size());
  for (const auto& e : memory.entries()) {
    const auto& k = e.key.code;
    double dot = 0.0;
    for (std::size_t i = 0; i < k.size(); ++i) dot += query.code[i] * k[i];
    scores.push_back(std::clamp(dot / (qn * l2(k)), -1.0, 1.0));
  }
  return scores;
}

std::vector<ScoredEntry> read_top_k(const PastEncoding& query, const MemoryStore& memory,
                                    std::size_t k) {
  const auto scores = similarity_scores(query, memory);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t n = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  std::vector<ScoredEntry> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back({order[i], scores[order[i]]});
  return out;
}

PredictionSet predict_encoded(const PastEncoding& pi, const MemoryStore& memory, std::size_t k,
                              const EncDecModel& model, DecodeMode mode,
                              std::optional<std::uint64_t> exclude_source) {
  std::vector<ScoredEntry> top;
  if (exclude_source) {
    auto all = read_top_k(pi, memory, k + 1);
    for (const auto& s : all) {
      if (memory[s.index].source_id == *exclude_source) continue;
      if (top.size() < k) top.push_back(s);
    }
  } else {
    top = read_top_k(pi, memory, k);
  }
  PredictionSet out;
  for (const auto& s : top) {
    out.scores.push_back(s.score);
    out.entries.push_back(s.index);
  }
  if (top.empty()) return out;
  if (mode == DecodeMode::kCopyFuture) {
    for (const auto& s : top) {
      const auto& f = memory[s.index].source_future;
      if (f.empty()) throw std::runtime_error("memory entry carries no stored future to copy");
      out.futures.push_back(f);
    }
    return out;
  }
  std::vector<const FutureEncoding*> phis;
  for (const auto& s : top) phis.push_back(&memory[s.index].value);
  out.futures = model.decode_many(pi, phis);
  return out;
}

PredictionSet predict(const Path& past, const MemoryStore& memory, std::size_t k,
                      const EncDecModel& model, DecodeMode mode) {
  if (memory.empty()) throw EmptyMemoryError();
  return predict_encoded(model.encode_past(past), memory, k, model, mode);
}

double miss_rate_error(std::span<const Vec2> prediction, std::span<const Vec2> ground_truth,
                       double th_horizon) {
  if (prediction.size() != ground_truth.size() || prediction.empty()) {
    throw std::invalid_argument(fmt::format("miss rate needs equal non-empty lengths, got {} and {}",
                                            prediction.size(), ground_truth.size()));
  }
  const std::size_t f = prediction.size();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < f; ++i) {
    const double th = th_horizon * static_cast<double>(i + 1) / static_cast<double>(f);
    if (distance(prediction[i], ground_truth[i]) <= th) ++hits;
  }
  return 1.0 - static_cast<double>(hits) / static_cast<double>(f);
}

double Controller::forward(double e) const { return 1.0 / (1.0 + std::exp(-(weight * e + bias))); }

double controller_loss(double e, double p) {
  if (!(e >= 0.0 && e <= 1.0)) throw std::invalid_argument(fmt::format("error {} outside [0, 1]", e));
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument(fmt::format("write probability {} outside [0, 1]", p));
  }
  return e * (1.0 - p) + (1.0 - e) * p;
}

EncodedSamples encode_samples(const EncDecModel& model, std::span<const Sample> samples) {
  EncodedSamples out;
  out.pasts.reserve(samples.size());
  out.futures.reserve(samples.size());
  for (const auto& s : samples) {
    out.pasts.push_back(model.encode_past(s.past));
    out.futures.push_back(model.encode_future(s.future));
  }
  return out;
}

namespace {

double top1_error(const PastEncoding& pi, const Sample& sample, const MemoryStore& memory,
                  const EncDecModel& model, double th_horizon) {
  if (memory.empty()) return 1.0;
  auto pred = predict_encoded(pi, memory, 1, model);
  return miss_rate_error(pred.futures.front(), sample.future, th_horizon);
}

MemoryEntry make_entry(const Sample& sample, const PastEncoding& pi, const FutureEncoding& phi,
                       std::uint64_t source_id, std::int64_t epoch) {
  return MemoryEntry{pi, phi, source_id, epoch, sample.future};
}

}  // namespace

ControllerTrainResult train_controller(std::span<const Sample> samples, const EncDecModel& model,
                                       const ControllerTrainOptions& options, Controller initial) {
  const auto enc = encode_samples(model, samples);
  auto w = ad::Tensor::from({1}, {initial.weight}, true);
  auto b = ad::Tensor::from({1}, {initial.bias}, true);
  std::vector<ad::Tensor> params{w, b};
  auto adam = AdamState::for_parameters(params, AdamOptions{options.learning_rate});
  Rng rng(sub_seed(options.seed, "controller.shuffle"));

  ControllerTrainResult result;
  MemoryStore memory;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    memory.clear();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    bool first_written = false;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const std::size_t i = order[pos];
      const double e = top1_error(enc.pasts[i], samples[i], memory, model,
                                  options.rule.th_horizon);
      zero_grads(params);
      auto p = ad::sigmoid(ad::add(ad::scale(w, e), b));
      auto loss = ad::add_scalar(ad::scale(p, 1.0 - 2.0 * e), e);
      loss.backward();
      loss_sum += loss.item();
      const double pw = p.item();
      adam_update(params, adam);

      const bool write = memory.empty() || options.rule.write_all || pw > 0.5;
      if (write) {
        memory.append(make_entry(samples[i], enc.pasts[i], enc.futures[i], i,
                                 static_cast<std::int64_t>(epoch)));
        if (pos == 0) first_written = true;
      }
    }
    result.epoch_loss.push_back(samples.empty() ? 0.0
                                                : loss_sum / static_cast<double>(samples.size()));
    result.memory_sizes.push_back(memory.size());
    result.first_written.push_back(first_written ? 1 : 0);
  }
  result.controller = Controller{w.at(0), b.at(0)};
  return result;
}

IngestDecision online_ingest(const Sample& sample, std::uint64_t source_id, MemoryStore& memory,
                             const EncDecModel& model, const Controller& controller,
                             const WriteRule& rule, std::int64_t write_epoch) {
  const auto pi = model.encode_past(sample.past);
  IngestDecision d;
  d.error = top1_error(pi, sample, memory, model, rule.th_horizon);
  d.write_probability = controller.forward(d.error);
  d.written = memory.empty() || rule.write_all || d.write_probability > 0.5;
  if (d.written) {
    memory.append(make_entry(sample, pi, model.encode_future(sample.future), source_id,
                             write_epoch));
  }
  return d;
}

MemoryStore fill_memory(std::span<const Sample> samples, const EncDecModel& model,
                        const Controller& controller, const WriteRule& rule,
                        std::uint64_t source_offset) {
  MemoryStore memory;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    online_ingest(samples[i], source_offset + i, memory, model, controller, rule);
  }
  return memory;
}

// --- snapshot -------------------------------------------------------------

std::vector<std::uint8_t> encode_memory(const MemoryStore& memory, std::uint64_t config_hash) {
  const std::size_t width = memory.empty() ? 0 : memory[0].key.width();
  const std::size_t vwidth = memory.empty() ? 0 : memory[0].value.width();
  if (width != vwidth) {
    throw std::invalid_argument("snapshot format needs equal key and value widths");
  }
  const std::size_t f = memory.empty() ? 0 : memory[0].source_future.size();
  ByteWriter w;
  w.bytes(fmt::format("MEM {} {}\n", memory.size(), width));
  w.u64(config_hash);
  w.u32(static_cast<std::uint32_t>(f));
  for (const auto& e : memory.entries()) {
    if (e.source_future.size() != f) {
      throw std::invalid_argument("memory entries disagree on stored future length");
    }
    w.u64(e.source_id);
    for (double v : e.key.code) w.f64(v);
    for (double v : e.value.code) w.f64(v);
    w.i64(e.write_epoch);
    for (const auto& p : e.source_future) {
      w.f64(p.x);
      w.f64(p.y);
    }
  }
  return w.buffer();
}

MemoryStore decode_memory(std::span<const std::uint8_t> bytes,
                          std::optional<std::uint64_t> expected_hash) {
  ByteReader r(bytes, "memory snapshot");
  std::string header;
  for (;;) {
    if (header.size() > 64) r.fail("memory header line is too long");
    const std::string c = r.bytes(1, "header line");
    if (c == "\n") break;
    header += c;
  }
  std::size_t n = 0, width = 0;
  {
    char tag[4] = {};
    unsigned long long nn = 0, ww = 0;
    int consumed = 0;
    if (std::sscanf(header.c_str(), "%3s %llu %llu%n", tag, &nn, &ww, &consumed) != 3 ||
        std::string(tag) != "MEM" || static_cast<std::size_t>(consumed) != header.size()) {
      throw FormatError(fmt::format(
          "memory snapshot: expected header 'MEM <entries> <width>', found '{}'", header));
    }
    n = static_cast<std::size_t>(nn);
    width = static_cast<std::size_t>(ww);
  }
  const std::uint64_t hash = r.u64("config hash");
  if (expected_hash) check_config_hash("memory snapshot", *expected_hash, hash);
  const std::uint32_t f = r.u32("future length");
  const std::size_t record = 8 + 16 * width + 8 + 16 * static_cast<std::size_t>(f);
  if (width > (1u << 20) || f > (1u << 20) ||
      (n > 0 && record * n > bytes.size() - r.offset())) {
    r.fail(fmt::format("header declares {} entries of width {} but the file is too short", n,
                       width));
  }
  MemoryStore memory;
  for (std::size_t i = 0; i < n; ++i) {
    MemoryEntry e;
    e.source_id = r.u64("source id");
    e.key.code.resize(width);
    e.value.code.resize(width);
    for (auto& v : e.key.code) v = r.f64("key");
    for (auto& v : e.value.code) v = r.f64("value");
    e.write_epoch = r.i64("write epoch");
    e.source_future.resize(f);
    for (auto& p : e.source_future) {
      p.x = r.f64("source future");
      p.y = r.f64("source future");
    }
    try {
      memory.append(std::move(e));
    } catch (const std::invalid_argument& ex) {
      throw FormatError(fmt::format("memory snapshot entry {}: {}", i, ex.what()));
    }
  }
  if (!r.at_end()) r.fail("trailing bytes after the last memory entry");
  return memory;
}

void save_memory(const std::filesystem::path& path, const MemoryStore& memory,
                 std::uint64_t config_hash) {
  write_file_bytes(path, encode_memory(memory, config_hash));
}

MemoryStore load_memory(const std::filesystem::path& path,
                        std::optional<std::uint64_t> expected_hash) {
  return decode_memory(read_file_bytes(path), expected_hash);
}

}  // namespace mantra
