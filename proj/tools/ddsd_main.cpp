// Command-line entry point: corpus generation, training, evaluation, and
// experiment comparison for the device-directed speech detector.
//
// Exit codes: 0 success; 1 usage, configuration, or data problems; 2 internal
// invariant failures (bugs).

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ddsd/checkpoint.hpp"
#include "ddsd/clf.hpp"
#include "ddsd/common.hpp"
#include "ddsd/config.hpp"
#include "ddsd/corpus.hpp"
#include "ddsd/evaluation.hpp"
#include "ddsd/fusion.hpp"
#include "ddsd/trainer.hpp"

namespace fs = std::filesystem;
using namespace ddsd;

namespace {

fs::path manifest_path(const fs::path& data_dir) {
  const fs::path p = data_dir / "manifest.jsonl";
  if (!fs::exists(p)) throw DataError("no manifest.jsonl under " + data_dir.string());
  return p;
}

void ensure_out_dir(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (!fs::is_directory(out)) throw IoError("cannot create output directory " + out.string());
}

void echo_resolved(const fs::path& out_dir, const json& resolved) {
  write_text_file(out_dir / "resolved_config.json", resolved.dump(2) + "\n");
}

MinMaxScaler fit_scaler(const std::vector<UtteranceRecord>& records) {
  std::vector<DecoderSignals> raw;
  raw.reserve(records.size());
  for (const auto& r : records) raw.push_back(r.decoder_signals_raw);
  return MinMaxScaler::fit(raw);
}

std::vector<MatX<float>> load_all_frames(const std::vector<UtteranceRecord>& records,
                                         const fs::path& manifest) {
  std::vector<MatX<float>> frames;
  frames.reserve(records.size());
  for (const auto& r : records) {
    if (!r.has_audio())
      throw DataError("record " + r.id + " has no audio features; this model requires them");
    frames.push_back(read_features(resolve_audio_ref(manifest, r.audio_ref)));
  }
  return frames;
}

std::vector<Label> labels_of(const std::vector<UtteranceRecord>& records) {
  std::vector<Label> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

int run_gen_data(const fs::path& config_path, const fs::path& out_dir,
                 std::optional<std::uint64_t> seed) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (seed) cfg.corpus.seed = *seed;
  ensure_out_dir(out_dir);
  const GenerationReport report = generate_corpus(cfg.corpus, out_dir);
  echo_resolved(out_dir, experiment_config_to_json(cfg));
  std::printf("wrote %lld directed + %lld non-directed utterances to %s\n",
              static_cast<long long>(report.directed.n),
              static_cast<long long>(report.non_directed.n), out_dir.string().c_str());
  std::printf("  directed: %zu text-ambiguous, %zu audio-ambiguous, %zu with trigger phrase\n",
              report.directed.text_ambiguous_ids.size(),
              report.directed.audio_ambiguous_ids.size(), report.directed.trigger_ids.size());
  std::printf("  non-directed: %zu text-ambiguous, %zu audio-ambiguous\n",
              report.non_directed.text_ambiguous_ids.size(),
              report.non_directed.audio_ambiguous_ids.size());
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int run_train_fusion(const ExperimentConfig& cfg, const fs::path& data_dir,
                     const std::optional<fs::path>& text_only_dir, const fs::path& out_dir) {
  const fs::path manifest = manifest_path(data_dir);
  const auto records = read_manifest(manifest);

  MinMaxScaler scaler;
  if (cfg.model.fusion.modalities.ds) scaler = fit_scaler(records);

  FusionModel<float> model;
  model.init(cfg.model.fusion, cfg.train.seed);

  ToyEncoder<float>* frozen =
      (cfg.model.fusion.modalities.audio && !cfg.model.fusion.encoder.trainable)
          ? &model.encoder
          : nullptr;
  Prepared<float> prep = prepare_examples<float>(records, manifest, cfg.model.fusion.modalities,
                                                 scaler, cfg.model.fusion.text_len, frozen);

  Prepared<float> aux;
  if (text_only_dir) {
    const fs::path aux_manifest = manifest_path(*text_only_dir);
    aux = prepare_examples<float>(read_manifest(aux_manifest), aux_manifest,
                                  cfg.model.fusion.modalities, scaler,
                                  cfg.model.fusion.text_len, nullptr, /*as_text_only=*/true);
  }

  std::printf("training '%s' on %zu examples (%lld trainable parameters)\n", cfg.name.c_str(),
              prep.examples.size(), static_cast<long long>(model.count_trainable_params()));

  const auto save_to = [&](const fs::path& p) {
    save_checkpoint(p, cfg.name, cfg.model, scaler, model.params());
  };
  std::function<void(std::int64_t)> after_epoch;
  if (cfg.train.checkpoint_interval > 0)
    after_epoch = [&](std::int64_t epoch) {
      if (epoch % cfg.train.checkpoint_interval == 0)
        save_to(out_dir / ("ckpt-epoch-" + std::to_string(epoch) + ".ckpt"));
    };

  const TrainResult res = train_fusion(model, prep.examples, aux.examples, cfg.train, after_epoch);

  save_to(out_dir / "model.ckpt");
  write_text_file(out_dir / "loss.csv", loss_log_to_csv(res.rows));
  std::printf("done: %lld steps, final epoch mean loss %.6f\n",
              static_cast<long long>(res.total_steps), res.epoch_mean_loss.back());
  return 0;
}

int run_train_clf(const ExperimentConfig& cfg, const fs::path& data_dir, const fs::path& out_dir) {
  const fs::path manifest = manifest_path(data_dir);
  const auto records = read_manifest(manifest);
  const auto frames = load_all_frames(records, manifest);
  const auto labels = labels_of(records);

  ClfModel<float> clf;
  clf.init(cfg.model.fusion.encoder, cfg.model.clf_hidden, cfg.clf_train.seed);
  std::printf("training '%s' on %zu examples (%lld trainable parameters)\n", cfg.name.c_str(),
              frames.size(), static_cast<long long>(clf.count_trainable_params()));

  const TrainResult res = train_clf(clf, frames, labels, cfg.clf_train);

  save_checkpoint(out_dir / "model.ckpt", cfg.name, cfg.model, MinMaxScaler{}, clf.params());
  write_text_file(out_dir / "loss.csv", loss_log_to_csv(res.rows));
  std::printf("done: %lld steps, final epoch mean loss %.6f\n",
              static_cast<long long>(res.total_steps), res.epoch_mean_loss.back());
  return 0;
}

int run_train(const fs::path& config_path, const fs::path& data_dir,
              const std::optional<fs::path>& text_only_dir, const fs::path& out_dir) {
  const ExperimentConfig cfg = load_experiment_config(config_path);
  ensure_out_dir(out_dir);
  echo_resolved(out_dir, experiment_config_to_json(cfg));
  if (cfg.model.kind == ModelKind::kClf) {
    if (text_only_dir)
      throw ConfigError("--text-only only applies to prefix_lm training");
    return run_train_clf(cfg, data_dir, out_dir);
  }
  return run_train_fusion(cfg, data_dir, text_only_dir, out_dir);
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int run_eval(const fs::path& ckpt_path, const fs::path& data_dir, const fs::path& out_dir,
             double clip, bool scores_only) {
  const fs::path manifest = manifest_path(data_dir);
  const auto records = read_manifest(manifest);
  ensure_out_dir(out_dir);

  std::string name;
  std::vector<std::string> modality_names;
  std::int64_t trainable = 0;
  std::vector<ScoredExample> scored;
  json model_json;

  if (peek_checkpoint_kind(ckpt_path) == ModelKind::kPrefixLm) {
    LoadedFusion loaded = load_fusion_checkpoint(ckpt_path);
    name = loaded.name;
    modality_names = loaded.model_cfg.fusion.modalities.names();
    trainable = loaded.model.count_trainable_params();
    model_json = model_config_to_json(loaded.model_cfg);
    const FusionConfig& fcfg = loaded.model_cfg.fusion;
    ToyEncoder<float>* frozen =
        (fcfg.modalities.audio && !fcfg.encoder.trainable) ? &loaded.model.encoder : nullptr;
    Prepared<float> prep = prepare_examples<float>(records, manifest, fcfg.modalities,
                                                   loaded.scaler, fcfg.text_len, frozen);
    scored.reserve(prep.examples.size());
    for (std::size_t i = 0; i < prep.examples.size(); ++i)
      scored.push_back(
          {prep.ids[i], prep.labels[i], loaded.model.score(prep.examples[i])});
  } else {
    LoadedClf loaded = load_clf_checkpoint(ckpt_path);
    name = loaded.name;
    modality_names = {"audio"};
    trainable = loaded.model.count_trainable_params();
    model_json = model_config_to_json(loaded.model_cfg);
    const auto frames = load_all_frames(records, manifest);
    scored.reserve(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i)
      scored.push_back({records[i].id, records[i].label, loaded.model.score(frames[i])});
  }

  write_text_file(out_dir / "scores.csv", scores_to_csv(scored));
  echo_resolved(out_dir, json{{"command", "eval"},
                              {"checkpoint", ckpt_path.string()},
                              {"data", data_dir.string()},
                              {"clip", clip},
                              {"scores_only", scores_only},
                              {"model", model_json}});
  if (scores_only) {
    std::printf("wrote %zu scores for '%s' to %s\n", scored.size(), name.c_str(),
                (out_dir / "scores.csv").string().c_str());
    return 0;
  }

  const EvalReport report = make_report(std::move(scored));
  emit_det_csv(report.curve, out_dir / "det.csv");
  emit_det_svg(report.curve, out_dir / "det.svg", clip);
  json rep{{"name", name},
           {"modalities", modality_names},
           {"trainable_params", trainable},
           {"eer", report.eer},
           {"eer_threshold", report.eer_threshold},
           {"n_directed", report.n_directed},
           {"n_non_directed", report.n_non_directed},
           {"clip", clip}};
  write_text_file(out_dir / "report.json", rep.dump(2) + "\n");

  std::printf("'%s' on %lld + %lld examples: EER %.4f at threshold %.4f\n", name.c_str(),
              static_cast<long long>(report.n_directed),
              static_cast<long long>(report.n_non_directed), report.eer, report.eer_threshold);
  return 0;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct CompareRow {
  std::string name;
  std::string modalities;
  std::int64_t trainable = 0;
  double eer = 0.0;
};

int run_compare(const std::vector<fs::path>& report_paths, const fs::path& out_file) {
  if (report_paths.empty()) throw ConfigError("compare needs at least one report");
  std::vector<CompareRow> rows;
  for (const auto& p : report_paths) {
    json j;
    try {
      j = json::parse(read_text_file(p));
    } catch (const json::exception& ex) {
      throw FormatError("cannot parse report " + p.string() + ": " + ex.what());
    }
    try {
      CompareRow row;
      row.name = j.at("name").get<std::string>();
      const auto mods = j.at("modalities").get<std::vector<std::string>>();
      for (std::size_t i = 0; i < mods.size(); ++i)
        row.modalities += (i ? "+" : "") + mods[i];
      if (row.modalities.empty()) row.modalities = "-";
      row.trainable = j.at("trainable_params").get<std::int64_t>();
      row.eer = j.at("eer").get<double>();
      rows.push_back(std::move(row));
    } catch (const json::exception& ex) {
      throw FormatError("report " + p.string() + " lacks a required field: " + ex.what());
    }
  }
  std::sort(rows.begin(), rows.end(), [](const CompareRow& a, const CompareRow& b) {
    if (a.eer != b.eer) return a.eer < b.eer;
    return a.name < b.name;
  });

  std::string table = "| experiment | modalities | trainable params | EER |\n"
                      "|---|---|---:|---:|\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "| %s | %s | %lld | %.4f |\n", r.name.c_str(),
                  r.modalities.c_str(), static_cast<long long>(r.trainable), r.eer);
    table += buf;
  }
  if (out_file.has_parent_path()) ensure_out_dir(out_file.parent_path());
  write_text_file(out_file, table);
  std::fputs(table.c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"device-directed speech detection workbench"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  std::string gen_config, gen_out;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--config", gen_config, "experiment config JSON")->required();
  gen->add_option("--out", gen_out, "output corpus directory")->required();
  gen->add_option("--seed", gen_seed, "override the corpus seed");

  // train
  auto* train = app.add_subcommand("train", "train a model on a corpus");
  std::string train_config, train_data, train_out;
  std::optional<std::string> train_text_only;
  train->add_option("--config", train_config, "experiment config JSON")->required();
  train->add_option("--data", train_data, "training corpus directory")->required();
  train->add_option("--text-only", train_text_only,
                    "text-only corpus directory for auxiliary batches");
  train->add_option("--out", train_out, "output directory")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "score a corpus with a trained model");
  std::string eval_ckpt, eval_data, eval_out;
  double eval_clip = 0.25;
  bool scores_only = false;
  ev->add_option("--ckpt", eval_ckpt, "model checkpoint")->required();
  ev->add_option("--data", eval_data, "evaluation corpus directory")->required();
  ev->add_option("--out", eval_out, "output directory")->required();
  ev->add_option("--clip", eval_clip, "DET plot axis clip (default 0.25)");
  ev->add_flag("--scores-only", scores_only, "emit scores.csv and stop");

  // compare
  auto* cmp = app.add_subcommand("compare", "tabulate evaluation reports");
  std::vector<std::string> cmp_reports;
  std::string cmp_out;
  cmp->add_option("--reports", cmp_reports, "report.json files")->required()->expected(-1);
  cmp->add_option("--out", cmp_out, "output table file")->required();

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return run_gen_data(gen_config, gen_out, gen_seed);
    if (train->parsed()) {
      std::optional<fs::path> aux;
      if (train_text_only) aux = fs::path(*train_text_only);
      return run_train(train_config, train_data, aux, train_out);
    }
    if (ev->parsed()) return run_eval(eval_ckpt, eval_data, eval_out, eval_clip, scores_only);
    if (cmp->parsed()) {
      std::vector<fs::path> paths(cmp_reports.begin(), cmp_reports.end());
      return run_compare(paths, cmp_out);
    }
    return 1;  // unreachable: a subcommand is required
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const InternalError& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  }
}
