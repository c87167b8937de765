#include <doctest.h>

#include <filesystem>
#include <string>

#include "mantra/binary_io.hpp"
#include "mantra/checkpoint.hpp"
#include "mantra/dataset_io.hpp"
#include "mantra/pipeline.hpp"

using namespace mantra;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mantra_unit_" + name);
  fs::remove_all(dir);
  return dir;
}

RunConfig tiny(const fs::path& out) {
  auto c = parse_config(
      "straight_count=4\narc_count=4\njunction_count=4\nextra_steps=2\n"
      "past_hidden=8\nfuture_hidden=8\ndecoder_hidden=16\n"
      "pretrain_epochs=30\ncontroller_epochs=5\nrefine_epochs=3\nrefine_iterations=2\n"
      "mlp_epochs=5\nonline_batch=1\nonline_runs=2\nlearning_rate=1e-3\nk_list=1,3\n");
  c.out_dir = out;
  return c;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("tiny pipeline is deterministic and leaves every artifact") {
    const auto c1 = tiny(scratch_dir("det1"));
    const auto c2 = tiny(scratch_dir("det2"));
    const auto r1 = pipeline_run(c1);
    const auto r2 = pipeline_run(c2);
    CHECK(format_report(r1) == format_report(r2));
    const RunPaths p1{c1.out_dir}, p2{c2.out_dir};
    for (auto f : {&RunPaths::encdec, &RunPaths::controller, &RunPaths::memory,
                   &RunPaths::refined, &RunPaths::report, &RunPaths::ablations}) {
      REQUIRE(fs::exists((p1.*f)()));
      CHECK(read_text_file((p1.*f)()) == read_text_file((p2.*f)()));
    }
    CHECK(r1.config_hash == c1.artifact_hash());

    const auto saved = load_config(p1.config());
    CHECK(saved.artifact_hash() == c1.artifact_hash());
    CHECK(read_text_file(p1.config()).find("# artifact_hash=") != std::string::npos);

    const auto csv = stage_inspect_memory(c1);
    const auto memory = load_memory(p1.memory(), c1.artifact_hash());
    CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) ==
          memory.size() + 1);
  }

  TEST_CASE("without a controller every training window is stored") {
    auto c = tiny(scratch_dir("nocontrol"));
    c.no_controller = true;
    pipeline_run(c);
    const RunPaths p{c.out_dir};
    CHECK_FALSE(fs::exists(p.controller()));
    const auto splits = load_splits(c);
    CHECK(load_memory(p.memory(), c.artifact_hash()).size() == splits.train.size());
  }

  TEST_CASE("inference switches reuse trained artifacts") {
    auto c = tiny(scratch_dir("switches"));
    pipeline_run(c);
    for (const char* kv : {"no_refine=true", "no_decoder=true", "no_encdec=true"}) {
      auto v = parse_config(kv, c);
      const auto report = stage_evaluate(v);
      CHECK_MESSAGE(report.config_hash == c.artifact_hash(), kv);
      const auto& row = report.row("mantra", 3);
      CHECK(row.fde.back() <= report.row("mantra", 1).fde.back());
    }
  }

  TEST_CASE("artifacts from another configuration are refused") {
    auto c = tiny(scratch_dir("mismatch"));
    pipeline_run(c);
    auto other = c;
    other.seed = c.seed + 1;
    CHECK_THROWS_AS(stage_evaluate(other), StageError);
    CHECK_THROWS_AS(stage_fill_memory(other), StageError);
    try {
      stage_evaluate(other);
    } catch (const StageError& e) {
      CHECK(e.stage() == "evaluate");
    }
  }

  TEST_CASE("truncated artifacts are rejected") {
    auto c = tiny(scratch_dir("truncate"));
    pipeline_run(c);
    const RunPaths p{c.out_dir};
    auto truncated = [&](const fs::path& path, auto&& stage) {
      const auto bytes = read_text_file(path);
      write_text_file(path, bytes.substr(0, bytes.size() - 3));
      CHECK_THROWS_AS(stage(), StageError);
      write_text_file(path, bytes);
    };
    truncated(p.encdec(), [&] { stage_train_controller(c); });
    truncated(p.controller(), [&] { stage_fill_memory(c); });
    truncated(p.memory(), [&] { stage_online(c, {}); });
    truncated(p.refined(), [&] { stage_evaluate(c); });
    truncated(p.encdec(), [&] { stage_online(c, {}); });
    CHECK_NOTHROW(stage_online(c, {}));
  }

  TEST_CASE("missing inputs name the producing stage") {
    auto c = tiny(scratch_dir("missing"));
    try {
      stage_pretrain(c);
      FAIL("expected a stage error");
    } catch (const StageError& e) {
      CHECK(std::string(e.what()).find("gen-data") != std::string::npos);
    }
    stage_gen_data(c);
    try {
      stage_train_controller(c);
      FAIL("expected a stage error");
    } catch (const StageError& e) {
      CHECK(std::string(e.what()).find("pretrain") != std::string::npos);
    }
  }

  TEST_CASE("ingest appends without removing entries") {
    auto c = tiny(scratch_dir("ingest"));
    c.no_controller = true;
    pipeline_run(c);
    const RunPaths p{c.out_dir};
    const auto before = load_memory(p.memory(), c.artifact_hash());
    const auto stream = c.out_dir / "stream.csv";
    write_text_file(stream, read_text_file(c.data_path() / "test.csv"));
    const auto summary = stage_ingest(c, stream);
    const auto after = load_memory(p.memory(), c.artifact_hash());
    CHECK(summary.written == summary.samples);
    CHECK(after.size() == before.size() + summary.written);
    for (std::size_t i = 0; i < before.size(); ++i) {
      CHECK(after[i].source_id == before[i].source_id);
    }
    for (std::size_t i = before.size(); i < after.size(); ++i) {
      CHECK(after[i].source_id >= (std::uint64_t{1} << 40));
    }
  }

  TEST_CASE("invalid configurations fail before any stage runs") {
    auto c = tiny(scratch_dir("invalid"));
    c.past_hidden = 3;
    CHECK_THROWS_AS(pipeline_run(c), ConfigError);
    CHECK_FALSE(fs::exists(c.out_dir));
  }
}
