// End-to-end tests of the command-line tool, driven as a subprocess.

#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "ddsd/checkpoint.hpp"
#include "ddsd/common.hpp"
#include "ddsd/evaluation.hpp"
#include "ddsd/manifest.hpp"
#include "test_util.hpp"

using namespace ddsd;
using ddsd_test::TempDir;
using nlohmann::json;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string cli_bin() {
  const char* env = std::getenv("DDSD_CLI_BIN");
  REQUIRE(env != nullptr);
  return env;
}

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::string& args, const TempDir& dir) {
  const auto out_path = dir / "_stdout.txt";
  const auto err_path = dir / "_stderr.txt";
  const std::string cmd = cli_bin() + " " + args + " > " + out_path.string() + " 2> " +
                          err_path.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text_file(out_path);
  r.err = read_text_file(err_path);
  return r;
}

// Minimal fast experiment: tiny corpus, tiny model.
json tiny_config(const std::string& name, const json& modalities) {
  return json{
      {"name", name},
      {"corpus",
       {{"n_directed", 8}, {"n_non_directed", 8}, {"frame_dim", 6}, {"frames_min", 4},
        {"frames_max", 6}, {"seed", 11}}},
      {"model",
       {{"kind", "prefix_lm"},
        {"modalities", modalities},
        {"text_len", 16},
        {"lm",
         {{"embed_dim", 16}, {"n_layers", 1}, {"n_heads", 2}, {"max_seq_len", 24},
          {"ff_dim", 32}}},
        {"encoder",
         {{"input_dim", 6}, {"hidden_dim", 8}, {"output_dim", 8}, {"n_layers", 1}}}}},
      {"train",
       {{"epochs", 2}, {"effective_batch_size", 4}, {"peak_lr", 1e-3}, {"seed", 3}}}};
}

void write_json(const std::filesystem::path& p, const json& j) {
  write_text_file(p, j.dump(2) + "\n");
}

}  // namespace

TEST_CASE("usage errors exit with code 1", "[cli]") {
  TempDir dir("cli_usage");
  REQUIRE(run_cli("", dir).code == 1);                         // subcommand required
  REQUIRE(run_cli("frobnicate", dir).code == 1);               // unknown subcommand
  REQUIRE(run_cli("gen-data", dir).code == 1);                 // missing required options
  REQUIRE(run_cli("--help", dir).code == 0);                   // help is a success
  const RunResult help = run_cli("--help", dir);
  REQUIRE_THAT(help.out, ContainsSubstring("gen-data"));
  REQUIRE_THAT(help.out, ContainsSubstring("compare"));
}

TEST_CASE("gen-data writes a corpus deterministically", "[cli]") {
  TempDir dir("cli_gen");
  const auto cfg_path = dir / "cfg.json";
  write_json(cfg_path, tiny_config("gen-test", json::array({"text", "audio", "ds"})));

  const RunResult r1 = run_cli("gen-data --config " + cfg_path.string() + " --out " +
                                   (dir / "c1").string(),
                               dir);
  INFO(r1.err);
  REQUIRE(r1.code == 0);
  REQUIRE_THAT(r1.out, ContainsSubstring("8 directed + 8 non-directed"));
  REQUIRE(std::filesystem::exists(dir / "c1" / "manifest.jsonl"));
  REQUIRE(std::filesystem::exists(dir / "c1" / "gen_log.json"));
  REQUIRE(std::filesystem::exists(dir / "c1" / "resolved_config.json"));
  REQUIRE(std::filesystem::is_directory(dir / "c1" / "features"));

  // Resolved echo parses and round-trips the experiment name.
  const json echoed = json::parse(read_text_file(dir / "c1" / "resolved_config.json"));
  REQUIRE(echoed.at("name") == "gen-test");
  REQUIRE(echoed.at("corpus").at("n_directed") == 8);
  REQUIRE(echoed.at("train").at("epochs") == 2);

  SECTION("same seed, same corpus; overridden seed, different corpus") {
    REQUIRE(run_cli("gen-data --config " + cfg_path.string() + " --out " + (dir / "c2").string(),
                    dir)
                .code == 0);
    REQUIRE(read_text_file(dir / "c1" / "manifest.jsonl") ==
            read_text_file(dir / "c2" / "manifest.jsonl"));

    REQUIRE(run_cli("gen-data --config " + cfg_path.string() + " --seed 777 --out " +
                        (dir / "c3").string(),
                    dir)
                .code == 0);
    REQUIRE(read_text_file(dir / "c1" / "manifest.jsonl") !=
            read_text_file(dir / "c3" / "manifest.jsonl"));
    const json echoed3 = json::parse(read_text_file(dir / "c3" / "resolved_config.json"));
    REQUIRE(echoed3.at("corpus").at("seed") == 777);
  }

  SECTION("config errors are reported on stderr with exit 1") {
    const RunResult bad = run_cli("gen-data --config " + (dir / "absent.json").string() +
                                      " --out " + (dir / "cx").string(),
                                  dir);
    REQUIRE(bad.code == 1);
    REQUIRE_THAT(bad.err, ContainsSubstring("error:"));

    json broken = tiny_config("x", json::array({"text"}));
    broken["corpus"]["n_directde"] = 5;
    write_json(dir / "broken.json", broken);
    const RunResult bad2 = run_cli("gen-data --config " + (dir / "broken.json").string() +
                                       " --out " + (dir / "cy").string(),
                                   dir);
    REQUIRE(bad2.code == 1);
    REQUIRE_THAT(bad2.err, ContainsSubstring("n_directde"));
  }
}

TEST_CASE("train/eval/compare pipeline", "[cli]") {
  TempDir dir("cli_pipe");
  const auto cfg_path = dir / "mm.json";
  write_json(cfg_path, tiny_config("mm-tiny", json::array({"text", "audio", "ds"})));

  // Corpus for training and a differently-seeded one for evaluation.
  REQUIRE(run_cli("gen-data --config " + cfg_path.string() + " --out " + (dir / "tr").string(),
                  dir)
              .code == 0);
  REQUIRE(run_cli("gen-data --config " + cfg_path.string() + " --seed 99 --out " +
                      (dir / "ev").string(),
                  dir)
              .code == 0);

  const RunResult tr = run_cli("train --config " + cfg_path.string() + " --data " +
                                   (dir / "tr").string() + " --out " + (dir / "run").string(),
                               dir);
  INFO(tr.err);
  REQUIRE(tr.code == 0);
  REQUIRE_THAT(tr.out, ContainsSubstring("trainable parameters"));
  REQUIRE_THAT(tr.out, ContainsSubstring("final epoch mean loss"));
  REQUIRE(std::filesystem::exists(dir / "run" / "model.ckpt"));
  REQUIRE(std::filesystem::exists(dir / "run" / "resolved_config.json"));

  // Loss CSV: header plus one row per step (16 examples, batch 4, 2 epochs).
  const std::string loss_csv = read_text_file(dir / "run" / "loss.csv");
  REQUIRE(loss_csv.rfind("step,epoch,lr,loss,grad_norm\n", 0) == 0);
  REQUIRE(std::count(loss_csv.begin(), loss_csv.end(), '\n') == 1 + 8);

  const RunResult evr = run_cli("eval --ckpt " + (dir / "run" / "model.ckpt").string() +
                                    " --data " + (dir / "ev").string() + " --out " +
                                    (dir / "report").string(),
                                dir);
  INFO(evr.err);
  REQUIRE(evr.code == 0);
  REQUIRE_THAT(evr.out, ContainsSubstring("EER"));
  REQUIRE(std::filesystem::exists(dir / "report" / "scores.csv"));
  REQUIRE(std::filesystem::exists(dir / "report" / "det.csv"));
  REQUIRE(std::filesystem::exists(dir / "report" / "det.svg"));

  const json rep = json::parse(read_text_file(dir / "report" / "report.json"));
  REQUIRE(rep.at("name") == "mm-tiny");
  REQUIRE(rep.at("modalities") == json::array({"text", "audio", "ds"}));
  REQUIRE(rep.at("trainable_params").get<std::int64_t>() > 0);
  REQUIRE(rep.at("eer").get<double>() >= 0.0);
  REQUIRE(rep.at("eer").get<double>() <= 1.0);
  REQUIRE(rep.at("n_directed") == 8);
  REQUIRE(rep.at("n_non_directed") == 8);

  // Scores CSV parses and covers every utterance.
  const auto scored = parse_scores_csv(read_text_file(dir / "report" / "scores.csv"));
  REQUIRE(scored.size() == 16);

  SECTION("scores-only skips the DET artifacts") {
    const RunResult so = run_cli("eval --ckpt " + (dir / "run" / "model.ckpt").string() +
                                     " --data " + (dir / "ev").string() +
                                     " --scores-only --out " + (dir / "so").string(),
                                 dir);
    REQUIRE(so.code == 0);
    REQUIRE(std::filesystem::exists(dir / "so" / "scores.csv"));
    REQUIRE_FALSE(std::filesystem::exists(dir / "so" / "det.csv"));
    REQUIRE_FALSE(std::filesystem::exists(dir / "so" / "report.json"));
  }

  SECTION("compare tabulates reports sorted by EER") {
    // A second, synthetic report to order against.
    json other = rep;
    other["name"] = "um-zzz";
    other["modalities"] = json::array({"text"});
    other["eer"] = 0.0;
    write_text_file(dir / "other.json", other.dump());
    const RunResult cr = run_cli("compare --reports " + (dir / "other.json").string() + " " +
                                     (dir / "report" / "report.json").string() + " --out " +
                                     (dir / "table.md").string(),
                                 dir);
    INFO(cr.err);
    REQUIRE(cr.code == 0);
    const std::string table = read_text_file(dir / "table.md");
    REQUIRE_THAT(table, ContainsSubstring("| experiment | modalities | trainable params | EER |"));
    const auto pos_other = table.find("um-zzz");
    const auto pos_mm = table.find("mm-tiny");
    REQUIRE(pos_other != std::string::npos);
    REQUIRE(pos_mm != std::string::npos);
    REQUIRE(pos_other < pos_mm);  // EER 0 sorts first
    REQUIRE(cr.out == table);     // table echoed to stdout

    // Missing field in a report is a user error.
    write_text_file(dir / "broken.json", "{\"name\": \"x\"}");
    REQUIRE(run_cli("compare --reports " + (dir / "broken.json").string() + " --out " +
                        (dir / "t2.md").string(),
                    dir)
                .code == 1);
  }

  SECTION("eval on a missing checkpoint fails cleanly") {
    const RunResult bad = run_cli("eval --ckpt " + (dir / "nope.ckpt").string() + " --data " +
                                      (dir / "ev").string() + " --out " + (dir / "x").string(),
                                  dir);
    REQUIRE(bad.code == 1);
    REQUIRE_THAT(bad.err, ContainsSubstring("error:"));
  }

  SECTION("train determinism: same config and data give identical checkpoints") {
    const RunResult tr2 = run_cli("train --config " + cfg_path.string() + " --data " +
                                      (dir / "tr").string() + " --out " + (dir / "run2").string(),
                                  dir);
    REQUIRE(tr2.code == 0);
    REQUIRE(read_text_file(dir / "run" / "loss.csv") ==
            read_text_file(dir / "run2" / "loss.csv"));
    // Binary identical checkpoints.
    const auto a = ckpt_detail::read_binary_file(dir / "run" / "model.ckpt");
    const auto b = ckpt_detail::read_binary_file(dir / "run2" / "model.ckpt");
    REQUIRE(a == b);
  }
}

TEST_CASE("clf training and evaluation through the cli", "[cli]") {
  TempDir dir("cli_clf");
  json cfg = tiny_config("clf-tiny", json::array({"audio"}));
  cfg["model"]["kind"] = "clf";
  cfg["model"]["clf_hidden"] = 8;
  cfg["train"] = json{{"epochs", 2}, {"effective_batch_size", 4}, {"peak_lr", 1e-3}, {"seed", 3}};
  const auto cfg_path = dir / "clf.json";
  write_json(cfg_path, cfg);

  REQUIRE(run_cli("gen-data --config " + cfg_path.string() + " --out " + (dir / "tr").string(),
                  dir)
              .code == 0);

  const RunResult tr = run_cli("train --config " + cfg_path.string() + " --data " +
                                   (dir / "tr").string() + " --out " + (dir / "run").string(),
                               dir);
  INFO(tr.err);
  REQUIRE(tr.code == 0);
  REQUIRE(peek_checkpoint_kind(dir / "run" / "model.ckpt") == ModelKind::kClf);

  const RunResult evr = run_cli("eval --ckpt " + (dir / "run" / "model.ckpt").string() +
                                    " --data " + (dir / "tr").string() + " --out " +
                                    (dir / "rep").string(),
                                dir);
  INFO(evr.err);
  REQUIRE(evr.code == 0);
  const json rep = json::parse(read_text_file(dir / "rep" / "report.json"));
  REQUIRE(rep.at("name") == "clf-tiny");
  REQUIRE(rep.at("modalities") == json::array({"audio"}));

  SECTION("--text-only is rejected for clf training") {
    const RunResult bad = run_cli("train --config " + cfg_path.string() + " --data " +
                                      (dir / "tr").string() + " --text-only " +
                                      (dir / "tr").string() + " --out " + (dir / "x").string(),
                                  dir);
    REQUIRE(bad.code == 1);
    REQUIRE_THAT(bad.err, ContainsSubstring("text-only"));
  }
}

TEST_CASE("text-only auxiliary corpus flows through training", "[cli]") {
  TempDir dir("cli_aux");
  json cfg = tiny_config("mm-aux", json::array({"text", "audio", "ds"}));
  cfg["train"]["text_only_mix"] = 4;
  const auto cfg_path = dir / "cfg.json";
  write_json(cfg_path, cfg);

  json text_cfg = cfg;
  text_cfg["corpus"]["text_only"] = true;
  text_cfg["corpus"]["seed"] = 55;
  const auto text_cfg_path = dir / "text.json";
  write_json(text_cfg_path, text_cfg);

  REQUIRE(run_cli("gen-data --config " + cfg_path.string() + " --out " + (dir / "mm").string(),
                  dir)
              .code == 0);
  REQUIRE(run_cli("gen-data --config " + text_cfg_path.string() + " --out " +
                      (dir / "text").string(),
                  dir)
              .code == 0);
  // The text-only corpus has no feature files.
  REQUIRE_FALSE(std::filesystem::exists(dir / "text" / "features"));
  const auto recs = read_manifest(dir / "text" / "manifest.jsonl");
  for (const auto& r : recs) REQUIRE_FALSE(r.has_audio());

  const RunResult tr = run_cli("train --config " + cfg_path.string() + " --data " +
                                   (dir / "mm").string() + " --text-only " +
                                   (dir / "text").string() + " --out " + (dir / "run").string(),
                               dir);
  INFO(tr.err);
  REQUIRE(tr.code == 0);
  // 16 mm -> 4 batches, 4 aux -> 1 batch, 2 epochs = 10 steps.
  const std::string loss_csv = read_text_file(dir / "run" / "loss.csv");
  REQUIRE(std::count(loss_csv.begin(), loss_csv.end(), '\n') == 1 + 10);
}

TEST_CASE("preset configs parse and validate", "[cli]") {
  // The shipped preset files must all load cleanly.
  const auto configs_dir = std::filesystem::path(__FILE__).parent_path().parent_path() / "configs";
  REQUIRE(std::filesystem::is_directory(configs_dir));
  std::size_t n = 0;
  for (const auto& entry : std::filesystem::directory_iterator(configs_dir)) {
    if (entry.path().extension() != ".json") continue;
    ++n;
    INFO(entry.path().string());
    REQUIRE_NOTHROW(load_experiment_config(entry.path()));
  }
  REQUIRE(n == 8);

  // Spot-check identities.
  const auto lora = load_experiment_config(configs_dir / "mm-all+lora.json");
  REQUIRE(lora.model.fusion.lora.has_value());
  REQUIRE(lora.model.fusion.lora->base_frozen);
  const auto clf = load_experiment_config(configs_dir / "clf.json");
  REQUIRE(clf.model.kind == ModelKind::kClf);
  const auto big = load_experiment_config(configs_dir / "um-text+500k.json");
  REQUIRE(big.model.fusion.lm.embed_dim == 96);
  REQUIRE_FALSE(big.model.fusion.modalities.audio);
}
