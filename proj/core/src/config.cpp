#include "mantra/config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>

#include "mantra/binary_io.hpp"
#include "mantra/layers.hpp"

namespace mantra {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw ConfigError(fmt::format("{}: '{}' is not {}", key, value, want));
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    bad_value(key, v, "a non-negative integer");
  }
  return out;
}

double to_f64(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean (true/false)");
}

std::vector<std::size_t> to_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(static_cast<std::size_t>(to_u64(key, trim(v.substr(0, comma)))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (out.empty()) bad_value(key, v, "a comma-separated list of integers");
  return out;
}

struct Field {
  const char* name;
  bool artifact;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define MANTRA_SIZE(member, artifact)                                                      \
  Field {                                                                                  \
    #member, artifact,                                                                     \
        [](RunConfig& c, std::string_view k, std::string_view v) {                         \
          c.member = static_cast<std::size_t>(to_u64(k, v));                               \
        },                                                                                 \
        [](const RunConfig& c) { return fmt::format("{}", c.member); }                     \
  }
#define MANTRA_REAL(member, artifact)                                                       \
  Field {                                                                                   \
    #member, artifact,                                                                      \
        [](RunConfig& c, std::string_view k, std::string_view v) { c.member = to_f64(k, v); }, \
        [](const RunConfig& c) { return fmt::format("{}", c.member); }                      \
  }
#define MANTRA_FLAG(member, artifact)                                                         \
  Field {                                                                                     \
    #member, artifact,                                                                        \
        [](RunConfig& c, std::string_view k, std::string_view v) { c.member = to_bool(k, v); }, \
        [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }           \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      Field{"seed", true,
            [](RunConfig& c, std::string_view k, std::string_view v) { c.seed = to_u64(k, v); },
            [](const RunConfig& c) { return fmt::format("{}", c.seed); }},
      Field{"preset", true,
            [](RunConfig& c, std::string_view k, std::string_view v) {
              if (v == "default") {
                c.sample_period = 0.5;
              } else if (v == "kitti-like") {
                c.sample_period = 0.1;
              } else {
                bad_value(k, v, "a preset (default, kitti-like)");
              }
              c.preset = std::string(v);
            },
            [](const RunConfig& c) { return c.preset; }},
      MANTRA_REAL(sample_period, true),
      MANTRA_REAL(past_seconds, true),
      MANTRA_REAL(future_seconds, true),
      MANTRA_SIZE(straight_count, true),
      MANTRA_SIZE(arc_count, true),
      MANTRA_SIZE(junction_count, true),
      MANTRA_SIZE(junction_branches, true),
      MANTRA_REAL(noise_sigma, true),
      MANTRA_SIZE(extra_steps, true),
      MANTRA_REAL(test_fraction, true),
      MANTRA_SIZE(past_hidden, true),
      MANTRA_SIZE(future_hidden, true),
      MANTRA_SIZE(decoder_hidden, true),
      MANTRA_REAL(learning_rate, true),
      MANTRA_SIZE(batch_size, true),
      MANTRA_REAL(grad_clip, true),
      MANTRA_SIZE(pretrain_epochs, true),
      MANTRA_SIZE(patience, true),
      MANTRA_REAL(validation_fraction, true),
      MANTRA_SIZE(controller_epochs, true),
      MANTRA_REAL(th_horizon, true),
      MANTRA_SIZE(refine_epochs, true),
      MANTRA_SIZE(refine_iterations, true),
      MANTRA_FLAG(learned_bridge, true),
      MANTRA_FLAG(no_rotation_invariance, true),
      MANTRA_FLAG(no_controller, true),
      MANTRA_FLAG(no_refine, false),
      MANTRA_FLAG(no_decoder, false),
      MANTRA_FLAG(no_encdec, false),
      Field{"k_list", false,
            [](RunConfig& c, std::string_view k, std::string_view v) { c.k_list = to_list(k, v); },
            [](const RunConfig& c) { return fmt::format("{}", fmt::join(c.k_list, ",")); }},
      MANTRA_SIZE(online_batch, false),
      MANTRA_SIZE(online_runs, false),
      MANTRA_SIZE(mlp_epochs, false),
      MANTRA_REAL(mlp_learning_rate, false),
      MANTRA_REAL(kalman_sigma_q, false),
      MANTRA_REAL(kalman_sigma_r, false),
      Field{"out_dir", false,
            [](RunConfig& c, std::string_view, std::string_view v) { c.out_dir = std::string(v); },
            [](const RunConfig& c) { return c.out_dir.string(); }},
      Field{"data_dir", false,
            [](RunConfig& c, std::string_view, std::string_view v) { c.data_dir = std::string(v); },
            [](const RunConfig& c) { return c.data_dir.string(); }},
  };
  return all;
}

#undef MANTRA_SIZE
#undef MANTRA_REAL
#undef MANTRA_FLAG

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  for (const auto& f : fields()) {
    if (key == f.name) {
      f.set(*this, key, value);
      return;
    }
  }
  throw ConfigError(fmt::format("unknown configuration key '{}'", key));
}

void RunConfig::validate() const {
  auto positive = [](const char* name, double v) {
    if (!(v > 0.0)) throw ConfigError(fmt::format("{} must be positive, got {}", name, v));
  };
  positive("sample_period", sample_period);
  positive("past_seconds", past_seconds);
  positive("future_seconds", future_seconds);
  positive("past_hidden", static_cast<double>(past_hidden));
  positive("future_hidden", static_cast<double>(future_hidden));
  positive("learning_rate", learning_rate);
  positive("batch_size", static_cast<double>(batch_size));
  positive("grad_clip", grad_clip);
  positive("th_horizon", th_horizon);
  positive("refine_iterations", static_cast<double>(refine_iterations));
  positive("online_batch", static_cast<double>(online_batch));
  positive("online_runs", static_cast<double>(online_runs));
  if (decoder_hidden != past_hidden + future_hidden) {
    throw ConfigError(fmt::format(
        "decoder_hidden ({}) must equal past_hidden + future_hidden ({} + {})", decoder_hidden,
        past_hidden, future_hidden));
  }
  if (window().past_len() < 2 || window().future_len() < 1) {
    throw ConfigError("the window needs at least two past and one future step");
  }
  if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
    throw ConfigError("validation_fraction must lie in [0, 1)");
  }
  for (std::size_t k : k_list) {
    if (k == 0) throw ConfigError("k_list entries must be positive");
  }
  if (no_decoder && no_encdec) {
    throw ConfigError("no_decoder and no_encdec are exclusive ablations");
  }
  try {
    synthetic().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string RunConfig::canonical_text() const {
  std::vector<std::string> lines;
  for (const auto& f : fields()) lines.push_back(fmt::format("{}={}", f.name, f.get(*this)));
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::uint64_t RunConfig::artifact_hash() const {
  std::vector<std::string> lines;
  for (const auto& f : fields()) {
    if (f.artifact) lines.push_back(fmt::format("{}={}", f.name, f.get(*this)));
  }
  std::sort(lines.begin(), lines.end());
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  return fnv1a(text);
}

WindowSpec RunConfig::window() const { return {sample_period, past_seconds, future_seconds}; }

SyntheticConfig RunConfig::synthetic() const {
  SyntheticConfig s;
  s.straight_count = straight_count;
  s.arc_count = arc_count;
  s.junction_count = junction_count;
  s.junction_branches = junction_branches;
  s.noise_sigma = noise_sigma;
  s.extra_steps = extra_steps;
  s.test_fraction = test_fraction;
  s.sample_period = sample_period;
  s.past_seconds = past_seconds;
  s.future_seconds = future_seconds;
  return s;
}

EncDecConfig RunConfig::encdec() const {
  EncDecConfig e;
  e.past_len = window().past_len();
  e.future_len = window().future_len();
  e.past_hidden = past_hidden;
  e.future_hidden = future_hidden;
  return e;
}

TrainOptions RunConfig::pretrain_options() const {
  TrainOptions t;
  t.epochs = pretrain_epochs;
  t.batch_size = batch_size;
  t.learning_rate = learning_rate;
  t.grad_clip = grad_clip;
  t.validation_fraction = validation_fraction;
  t.patience = patience;
  t.seed = sub_seed(seed, "pretrain");
  return t;
}

RefinementConfig RunConfig::refinement() const {
  RefinementConfig r;
  r.iterations = refine_iterations;
  r.hidden = past_hidden;
  r.learned_bridge = learned_bridge;
  return r;
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(fmt::format("line {}: expected key=value, got '{}'", line_no, line));
    }
    try {
      base.set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("line {}: {}", line_no, e.what()));
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  try {
    return parse_config(text, std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace mantra
