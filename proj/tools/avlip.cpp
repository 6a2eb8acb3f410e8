// tools/avlip.cpp

// Copyright 2026  The avlip authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// avlip command-line front end.  Subcommands cover the whole workflow:
//   synth    generate a deterministic synthetic audio-visual corpus
//   prepare  write partition manifests and trial lists
//   train    train the audio or video embedding network
//   extract  compute per-utterance embeddings into a store file
//   score    score a trial list (cosine / PLDA / GMM-UBM)
//   fuse     feature-level or score-level fusion
//   eval     EER / minDCF for one score file
//   report   combined multi-system report with DET curves
// Exit codes: 0 success, 1 runtime failure, 2 configuration/usage error.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "avlip/config.hpp"
#include "avlip/pipeline.hpp"

namespace fs = std::filesystem;
using namespace avlip;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::string workdir_flag;
  int64_t seed_flag = -1;
  int jobs_flag = 0;
  bool strict_flag = false;
};

RunConfig resolve_config(const GlobalOpts& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  if (const char* env = std::getenv("AVLIP_WORKDIR"); env && *env) cfg.workdir = env;
  if (!g.workdir_flag.empty()) cfg.workdir = g.workdir_flag;
  if (g.seed_flag >= 0) cfg.seed = static_cast<uint64_t>(g.seed_flag);
  if (g.jobs_flag > 0) cfg.jobs = g.jobs_flag;
  if (g.strict_flag) cfg.strict = true;
  cfg.validate();
  return cfg;
}

fs::path wd(const RunConfig& cfg, const std::string& sub = "") {
  fs::path p = cfg.workdir;
  if (!sub.empty()) p /= sub;
  fs::create_directories(p);
  return p;
}

fs::path partition_manifest_path(const RunConfig& cfg, const std::string& name) {
  return fs::path(cfg.workdir) / "partitions" / (name + ".tsv");
}

fs::path trials_path(const RunConfig& cfg, const std::string& name) {
  return fs::path(cfg.workdir) / "trials" / (name + ".tsv");
}

fs::path store_path(const RunConfig& cfg, const std::string& partition) {
  return fs::path(cfg.workdir) / "stores" / (partition + ".tsv");
}

fs::path checkpoint_path(const RunConfig& cfg, const std::string& stream) {
  return fs::path(cfg.workdir) / "checkpoints" / (stream + ".ckpt");
}

fs::path scores_path(const RunConfig& cfg, const std::string& partition,
                     const std::string& system) {
  return fs::path(cfg.workdir) / "scores" / (partition + "_" + system + ".tsv");
}

Manifest load_partition(const RunConfig& cfg, const std::string& name) {
  const fs::path p = partition_manifest_path(cfg, name);
  if (!fs::exists(p))
    raise<ConfigError>("partition manifest not found: ", p.string(),
                       " (run `avlip prepare` first)");
  return load_manifest(p.string(), cfg.strict);
}

// ---------------------------------------------------------------------------

int cmd_prepare(const RunConfig& cfg) {
  PartitionSet parts;
  if (cfg.data.mode == "synth") {
    SynthConfig sc = cfg.data.synth;
    const std::string corpus_dir = (wd(cfg, "corpus")).string();
    const Manifest m = synth_corpus(sc, corpus_dir);
    std::cout << "synthesized " << m.num_utterances() << " utterances / "
              << m.num_speakers() << " speakers under " << corpus_dir << "\n";
    parts = synth_partitions(m, cfg.data.synth_train_utts, cfg.data.synth_dev_utts);
  } else {
    std::vector<Manifest> sources;
    for (const auto& [name, path] : cfg.data.manifests) {
      Manifest m = load_manifest(path, cfg.strict);
      m.name = name;
      sources.push_back(std::move(m));
    }
    if (sources.empty()) raise<ConfigError>("manifests mode needs data.manifests entries");
    PartitionScheme scheme;
    scheme.rules = cfg.data.rules;
    scheme.seed = cfg.data.partition_seed;
    parts = make_partitions(sources, scheme);
  }

  wd(cfg, "partitions");
  wd(cfg, "trials");
  for (const auto& p : parts.partitions) {
    save_manifest(partition_manifest_path(cfg, p.name).string(), p.manifest);
    std::cout << "partition " << p.name << ": " << p.manifest.num_speakers()
              << " speakers, " << p.manifest.num_utterances() << " utterances\n";
  }
  std::vector<std::string> trial_parts = cfg.data.trials.partitions;
  if (trial_parts.empty())
    for (const auto& p : parts.partitions)
      if (p.role == PartitionRole::kTest) trial_parts.push_back(p.name);
  for (const auto& name : trial_parts) {
    const auto& p = parts.find(name);
    const TrialList trials = generate_trials(p, cfg.data.trials.n_pairs, cfg.data.trials.seed);
    save_trials(trials_path(cfg, name).string(), trials);
    std::cout << "trials " << name << ": " << trials.size() << " pairs\n";
  }
  return 0;
}

int cmd_synth(const SynthConfig& sc, const std::string& out_dir) {
  const Manifest m = synth_corpus(sc, out_dir);
  std::cout << "wrote " << m.num_utterances() << " utterances ("
            << m.num_speakers() << " speakers) to " << out_dir << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& stream, int epochs_override) {
  const Manifest train_manifest = load_partition(cfg, "training");
  wd(cfg, "checkpoints");
  wd(cfg, "logs");
  const std::string ckpt = checkpoint_path(cfg, stream).string();
  const std::string log_path =
      (fs::path(cfg.workdir) / "logs" / (stream + "_metrics.tsv")).string();

  if (stream == "video") {
    VideoTrainSet set =
        build_video_train_set(train_manifest, cfg.video.segment_frames, cfg.jobs);
    McnnConfig mc = cfg.video.model;
    mc.n_classes = set.n_classes;
    McnnModel<float> model(mc, cfg.seed);
    VideoTrainHyper hyper = cfg.video.train;
    if (epochs_override > 0) hyper.epochs = epochs_override;
    const auto log = train_video(model, set, hyper, cfg.seed, ckpt);
    save_metrics_log(log_path, log);
    std::cout << "video training: best epoch " << log.best_epoch << " accuracy "
              << log.best_accuracy << "; checkpoint " << ckpt << "\n";
  } else if (stream == "audio") {
    AudioTrainSet finetune = build_audio_train_set(train_manifest, cfg.mfcc, cfg.jobs);
    AudioTrainSet pretrain;
    bool has_pretrain = false;
    if (fs::exists(partition_manifest_path(cfg, "pretrain"))) {
      pretrain = build_audio_train_set(load_partition(cfg, "pretrain"), cfg.mfcc, cfg.jobs);
      has_pretrain = true;
    }
    EtdnnConfig ac = cfg.audio.model;
    ac.n_classes = has_pretrain ? pretrain.n_classes : finetune.n_classes;
    EtdnnModel<float> model(ac, cfg.seed);
    AudioTrainHyper hyper = cfg.audio.train;
    if (epochs_override > 0) hyper.epochs = epochs_override;
    const auto log = train_audio(model, has_pretrain ? &pretrain : nullptr, finetune,
                                 hyper, cfg.seed, ckpt);
    save_metrics_log(log_path, log);
    std::cout << "audio training: best epoch " << log.best_epoch << " accuracy "
              << log.best_accuracy << "; checkpoint " << ckpt << "\n";
  } else {
    raise<ConfigError>("stream must be audio or video, got ", stream);
  }
  return 0;
}

int cmd_extract(const RunConfig& cfg, const std::string& stream,
                const std::string& partition, const std::string& manifest_path) {
  const Manifest m = manifest_path.empty() ? load_partition(cfg, partition)
                                           : load_manifest(manifest_path, cfg.strict);
  const bool do_audio = stream == "both" || stream == "audio";
  const bool do_video = stream == "both" || stream == "video";

  std::unique_ptr<EtdnnModel<float>> audio_model;
  std::unique_ptr<McnnModel<float>> video_model;
  if (do_audio) {
    const std::string p = checkpoint_path(cfg, "audio").string();
    if (!fs::exists(p)) raise<MissingCheckpoint>("no audio checkpoint at ", p);
    audio_model = std::make_unique<EtdnnModel<float>>(EtdnnModel<float>::load(p));
  }
  if (do_video) {
    const std::string p = checkpoint_path(cfg, "video").string();
    if (!fs::exists(p)) raise<MissingCheckpoint>("no video checkpoint at ", p);
    video_model = std::make_unique<McnnModel<float>>(McnnModel<float>::load(p));
  }

  ExtractionResult res =
      extract_embeddings(m, audio_model.get(), video_model.get(), cfg.mfcc,
                         cfg.video.segment_frames, cfg.jobs);
  wd(cfg, "stores");
  const std::string name = manifest_path.empty() ? partition : m.name;
  res.store.save(store_path(cfg, name).string());
  std::cout << "extracted " << res.store.size() << " utterances to "
            << store_path(cfg, name).string() << "\n";
  if (!res.failures.empty()) {
    std::cout << res.failures.size() << " failures:\n";
    for (const auto& f : res.failures)
      std::cout << "  " << f.utt_id << " [" << f.stream << "]: " << f.reason << "\n";
    if (cfg.strict) raise<Error>("extraction failures in strict mode");
  }
  return 0;
}

PldaModel plda_for_stream(const RunConfig& cfg, Stream stream) {
  const std::string model_path =
      (wd(cfg, "models") / (std::string("plda_") + to_string(stream) + ".bin")).string();
  if (fs::exists(model_path)) return PldaModel::load(model_path);

  const fs::path dev_store_path = store_path(cfg, "development");
  if (!fs::exists(dev_store_path))
    raise<ConfigError>("PLDA needs the development store: run `avlip extract "
                       "--partition development` first");
  const Manifest dev = load_partition(cfg, "development");
  const EmbeddingStore store = EmbeddingStore::load(dev_store_path.string());
  const auto labels = speaker_labels(dev);

  std::vector<const std::vector<float>*> rows;
  std::vector<int> row_labels;
  for (const auto& r : dev.records) {
    if (!store.has(r.utt_id, stream)) continue;
    rows.push_back(&store.get(r.utt_id, stream));
    row_labels.push_back(labels.at(r.speaker_id));
  }
  if (rows.empty()) raise<InsufficientData>("development store has no embeddings");
  Eigen::MatrixXd x(static_cast<int64_t>(rows.size()),
                    static_cast<int64_t>(rows[0]->size()));
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows[i]->size(); ++j)
      x(static_cast<int64_t>(i), static_cast<int64_t>(j)) = (*rows[i])[j];

  PldaModel model = train_plda(x, row_labels, cfg.plda);
  model.save(model_path);
  std::cout << "trained PLDA (" << to_string(stream) << ", rank "
            << cfg.plda.rank << ") -> " << model_path << "\n";
  return model;
}

int cmd_score(const RunConfig& cfg, const std::string& partition,
              const std::string& stream_name, const std::string& measure) {
  const fs::path tpath = trials_path(cfg, partition);
  if (!fs::exists(tpath)) raise<ConfigError>("no trial list at ", tpath.string());
  const TrialList trials = load_trials(tpath.string());
  if (trials.empty()) raise<ConfigError>("empty trial list: ", tpath.string());

  ScoreSet scores;
  if (measure == "gmm-ubm") {
    if (stream_name != "audio")
      raise<ConfigError>("gmm-ubm scores the audio stream only");
    const std::string ubm_path = (wd(cfg, "models") / "ubm.bin").string();
    GmmModel ubm;
    if (fs::exists(ubm_path)) {
      ubm = GmmModel::load(ubm_path);
    } else {
      const Manifest train_manifest = load_partition(cfg, "training");
      std::vector<Eigen::MatrixXd> feats(train_manifest.records.size());
      parallel_for(static_cast<int64_t>(train_manifest.records.size()), cfg.jobs,
                   [&](int64_t i) {
                     feats[static_cast<size_t>(i)] = gmm_frames(
                         utterance_mfcc(train_manifest.records[static_cast<size_t>(i)], cfg.mfcc),
                         cfg.ubm);
                   });
      int64_t total = 0;
      for (const auto& f : feats) total += f.rows();
      Eigen::MatrixXd pool(total, feats[0].cols());
      int64_t row = 0;
      for (const auto& f : feats) {
        pool.middleRows(row, f.rows()) = f;
        row += f.rows();
      }
      GmmConfig gc = cfg.ubm.gmm;
      gc.seed = cfg.seed;
      ubm = train_ubm(pool, gc).model;
      ubm.save(ubm_path);
      std::cout << "trained UBM (" << gc.mixtures << " mixtures) -> " << ubm_path << "\n";
    }
    const Manifest test_manifest = load_partition(cfg, partition);
    scores = gmm_ubm_score_trials(ubm, test_manifest, trials, cfg.mfcc, cfg.ubm, cfg.jobs);
  } else {
    const fs::path spath = store_path(cfg, partition);
    if (!fs::exists(spath))
      raise<ConfigError>("no embedding store at ", spath.string(),
                         " (run `avlip extract` first)");
    const EmbeddingStore store = EmbeddingStore::load(spath.string());
    ScorerSpec spec;
    spec.stream = stream_from_string(stream_name);
    PldaModel plda;
    if (measure == "cosine") {
      spec.kind = ScorerSpec::Kind::kCosine;
    } else if (measure == "plda") {
      spec.kind = ScorerSpec::Kind::kPlda;
      plda = plda_for_stream(cfg, spec.stream);
      spec.plda = &plda;
    } else {
      raise<ConfigError>("measure must be cosine, plda or gmm-ubm, got ", measure);
    }
    scores = evaluate_trials(store, trials, spec);
  }

  wd(cfg, "scores");
  const std::string out = scores_path(cfg, partition, scores.system_name).string();
  save_scores(out, scores);
  const auto rep = evaluate_system(scores, cfg.metrics.p_target, cfg.metrics.c_miss,
                                   cfg.metrics.c_fa);
  std::cout << scores.system_name << ": EER " << 100.0 * rep.eer << "% minDCF "
            << rep.min_dcf << " -> " << out << "\n";
  return 0;
}

int cmd_fuse(const RunConfig& cfg, const std::string& partition, const std::string& mode,
             std::string a_path, std::string b_path) {
  wd(cfg, "scores");
  if (mode == "feature") {
    const fs::path spath = store_path(cfg, partition);
    if (!fs::exists(spath)) raise<ConfigError>("no embedding store at ", spath.string());
    const fs::path tpath = trials_path(cfg, partition);
    if (!fs::exists(tpath)) raise<ConfigError>("no trial list at ", tpath.string());
    const TrialList trials = load_trials(tpath.string());
    if (trials.empty()) raise<ConfigError>("empty trial list: ", tpath.string());
    ScorerSpec spec;
    spec.kind = ScorerSpec::Kind::kFusedFeature;
    ScoreSet fused = evaluate_trials(EmbeddingStore::load(spath.string()), trials, spec);
    fused.system_name = "feature-fusion";
    const std::string out = scores_path(cfg, partition, fused.system_name).string();
    save_scores(out, fused);
    std::cout << "feature fusion -> " << out << "\n";
    return 0;
  }
  if (mode != "score") raise<ConfigError>("fuse mode must be feature or score");
  if (a_path.empty()) a_path = scores_path(cfg, partition, "audio-cosine").string();
  if (b_path.empty()) b_path = scores_path(cfg, partition, "video-cosine").string();
  for (const auto& p : {a_path, b_path})
    if (!fs::exists(p)) raise<ConfigError>("missing score file: ", p);
  ScoreSet fused = score_fuse(load_scores(a_path), load_scores(b_path),
                              {cfg.fusion.weight_audio, cfg.fusion.weight_video});
  fused.system_name = "score-fusion";
  const std::string out = scores_path(cfg, partition, fused.system_name).string();
  save_scores(out, fused);
  std::cout << "score fusion -> " << out << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& scores_file,
             const std::string& det_out) {
  if (!fs::exists(scores_file)) raise<ConfigError>("no such score file: ", scores_file);
  const ScoreSet s = load_scores(scores_file);
  if (s.trials.empty()) raise<ConfigError>("empty score file: ", scores_file);
  const auto rep = evaluate_system(s, cfg.metrics.p_target, cfg.metrics.c_miss,
                                   cfg.metrics.c_fa);
  std::cout << format_report({rep}, cfg.metrics.p_target);
  if (!det_out.empty()) {
    save_det_csv(det_out, det_curve(s));
    std::cout << "DET points -> " << det_out << "\n";
  }
  return 0;
}

int cmd_report(const RunConfig& cfg, const std::string& partition,
               std::vector<std::string> score_files, const std::string& out_path) {
  if (score_files.empty()) {
    for (const char* sys : {"audio-cosine", "video-cosine", "feature-fusion",
                            "score-fusion"}) {
      const fs::path p = scores_path(cfg, partition, sys);
      if (fs::exists(p)) score_files.push_back(p.string());
    }
  }
  if (score_files.empty())
    raise<ConfigError>("no score files found for partition ", partition);
  std::vector<SystemReport> reports;
  wd(cfg, "det");
  for (const auto& f : score_files) {
    if (!fs::exists(f)) raise<ConfigError>("no such score file: ", f);
    const ScoreSet s = load_scores(f);
    if (s.trials.empty()) raise<ConfigError>("empty score file: ", f);
    reports.push_back(evaluate_system(s, cfg.metrics.p_target, cfg.metrics.c_miss,
                                      cfg.metrics.c_fa));
    save_det_csv((fs::path(cfg.workdir) / "det" / (s.system_name + ".csv")).string(),
                 det_curve(s));
  }
  const std::string text = format_report(reports, cfg.metrics.p_target);
  std::cout << text;
  const std::string out = out_path.empty()
                              ? (fs::path(cfg.workdir) / ("report_" + partition + ".txt")).string()
                              : out_path;
  std::ofstream os(out);
  os << text;
  std::cout << "report -> " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"audio-visual lip biometrics toolkit"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "JSON run configuration");
  app.add_option("--workdir", g.workdir_flag, "working directory (overrides config/env)");
  app.add_option("--seed", g.seed_flag, "global seed override");
  app.add_option("--jobs", g.jobs_flag, "worker parallelism for feature extraction");
  app.add_flag("--strict", g.strict_flag, "fail on missing media / partial failures");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  std::string synth_out = "synth_corpus";
  SynthConfig synth_cfg;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--speakers", synth_cfg.n_speakers, "number of speakers");
  synth->add_option("--utts", synth_cfg.utts_per_speaker, "utterances per speaker");
  synth->add_option("--synth-seed", synth_cfg.seed, "corpus seed");
  synth->add_option("--video-format", synth_cfg.video_format, "npy or pgm");

  auto* prepare = app.add_subcommand("prepare", "write partitions and trial lists");

  auto* train = app.add_subcommand("train", "train one stream");
  std::string train_stream;
  int train_epochs = -1;
  train->add_option("--stream", train_stream, "audio or video")->required();
  train->add_option("--epochs", train_epochs, "override the epoch budget");

  auto* extract = app.add_subcommand("extract", "extract embeddings");
  std::string extract_stream = "both", extract_partition = "test", extract_manifest;
  extract->add_option("--stream", extract_stream, "both, audio or video");
  extract->add_option("--partition", extract_partition, "partition name");
  extract->add_option("--manifest", extract_manifest, "explicit manifest path");

  auto* score = app.add_subcommand("score", "score a trial list");
  std::string score_partition = "test", score_stream = "audio", score_measure = "cosine";
  score->add_option("--partition", score_partition, "partition name");
  score->add_option("--stream", score_stream, "audio or video");
  score->add_option("--measure", score_measure, "cosine, plda or gmm-ubm");

  auto* fuse = app.add_subcommand("fuse", "fuse two systems");
  std::string fuse_partition = "test", fuse_mode = "score", fuse_a, fuse_b;
  fuse->add_option("--partition", fuse_partition, "partition name");
  fuse->add_option("--mode", fuse_mode, "feature or score");
  fuse->add_option("--a", fuse_a, "first score file (score mode)");
  fuse->add_option("--b", fuse_b, "second score file (score mode)");

  auto* eval = app.add_subcommand("eval", "evaluate one score file");
  std::string eval_scores, eval_det;
  eval->add_option("--scores", eval_scores, "score file")->required();
  eval->add_option("--det", eval_det, "write DET curve CSV here");

  auto* report = app.add_subcommand("report", "multi-system report");
  std::string report_partition = "test", report_out;
  std::vector<std::string> report_scores;
  report->add_option("--partition", report_partition, "partition name");
  report->add_option("--scores", report_scores, "explicit score files");
  report->add_option("--out", report_out, "report output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const RunConfig cfg = resolve_config(g);
    if (synth->parsed()) return cmd_synth(synth_cfg, synth_out);
    if (prepare->parsed()) return cmd_prepare(cfg);
    if (train->parsed()) return cmd_train(cfg, train_stream, train_epochs);
    if (extract->parsed())
      return cmd_extract(cfg, extract_stream, extract_partition, extract_manifest);
    if (score->parsed()) return cmd_score(cfg, score_partition, score_stream, score_measure);
    if (fuse->parsed()) return cmd_fuse(cfg, fuse_partition, fuse_mode, fuse_a, fuse_b);
    if (eval->parsed()) return cmd_eval(cfg, eval_scores, eval_det);
    if (report->parsed()) return cmd_report(cfg, report_partition, report_scores, report_out);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
