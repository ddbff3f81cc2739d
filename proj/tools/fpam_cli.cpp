// fpam: feature extraction, training, evaluation and attention export.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data or I/O
// error, 3 numeric abort.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fpam/checkpoint.hpp"
#include "fpam/config.hpp"
#include "fpam/dataset.hpp"
#include "fpam/errors.hpp"
#include "fpam/goldens.hpp"
#include "fpam/parallel.hpp"
#include "fpam/report.hpp"
#include "fpam/training.hpp"

namespace fs = std::filesystem;
using namespace fpam;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

constexpr int kPrecisionBits = static_cast<int>(sizeof(Real) * 8);

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// Flags shared by train and ablate; unset flags leave the config untouched.
struct TrainOverrides {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string mixup;
  std::string folds;
  std::optional<std::size_t> epochs;
  std::string name;
  std::string out_dir;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config, "INI experiment file")->check(CLI::ExistingFile);
    cmd.add_option("--preset", preset, "Backbone preset")->check(CLI::IsMember({"tiny", "paper50"}));
    cmd.add_option("--seed", seed, "Seed for initialization and shuffling");
    cmd.add_option("--mixup", mixup, "Mixup alpha or 'off'");
    cmd.add_option("--folds", folds, "Test folds, e.g. 1,3 or all");
    cmd.add_option("--epochs", epochs, "Number of epochs");
    cmd.add_option("--name", name, "Run name (directory under the output root)");
    cmd.add_option("--out-dir", out_dir, "Output root");
  }

  TrainConfig resolve() const {
    TrainConfig c;
    if (!config.empty()) c = apply_config(c, IniFile::load(config));
    if (!preset.empty()) c.preset = preset;
    if (seed) c.seed = *seed;
    if (!mixup.empty()) c.mixup_alpha = parse_mixup(mixup);
    if (!folds.empty()) c.folds = parse_folds(folds);
    if (epochs) c.epochs = *epochs;
    if (!name.empty()) c.name = name;
    if (!out_dir.empty()) c.out_dir = out_dir;
    c.validate();
    if (c.precision != kPrecisionBits) {
      throw ConfigError("[run] precision = " + std::to_string(c.precision) + " but this binary computes at " +
                        std::to_string(kPrecisionBits) + " bits (use fpam" + (c.precision == 64 ? "64" : "") + ")");
    }
    return c;
  }
};

void echo_config(const TrainConfig& c) {
  std::cout << "# resolved configuration\n" << to_ini(c) << "# end configuration\n" << std::flush;
}

struct Loaded {
  CheckpointInfo info;
  Model model;
};

Loaded load_model(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw DataError("checkpoint not found: " + checkpoint.string());
  CheckpointInfo info = read_checkpoint_info(checkpoint);
  Model model(info.model, 0);
  load_checkpoint(checkpoint, model.params());
  return {std::move(info), std::move(model)};
}

int cmd_featurize(const fs::path& data, const fs::path& meta, const fs::path& out, const FrontendParams& params) {
  params.validate();
  DatasetIndex index = load_metadata(meta);
  if (!data.empty()) index.audio_dir = data;
  std::size_t hits = 0;
  const FeatureSet set = featurize_dataset(index, params, out, &hits);
  std::size_t frames = 0;
  for (const auto& f : set.items) frames += f.frames;
  std::cout << "featurized " << set.items.size() << " clips (" << hits << " cached, " << set.items.size() - hits
            << " computed), " << frames << " frames total\n";
  return 0;
}

int cmd_train(const TrainOverrides& flags) {
  const TrainConfig config = flags.resolve();
  echo_config(config);
  const auto start = std::chrono::steady_clock::now();
  const TrainReport report = run_experiment(config, &std::cout);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cerr << "elapsed " << fmt4(secs) << " s\n";
  for (const auto& f : report.folds) std::cout << "fold " << f.fold << " accuracy " << fmt4(f.final_accuracy) << "\n";
  std::cout << "mean CV accuracy " << fmt4(report.mean_accuracy) << "\n";
  return 0;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& meta, int fold, const fs::path& data, fs::path out,
             fs::path cache) {
  if (fold < 1 || fold > kNumFolds) throw UsageError("--fold must be in 1..5");
  Loaded loaded = load_model(checkpoint);
  DatasetIndex index = load_metadata(meta);
  if (!data.empty()) index.audio_dir = data;
  if (index.num_classes != loaded.info.model.num_classes) {
    throw DataError("metadata has " + std::to_string(index.num_classes) + " classes, checkpoint expects " +
                    std::to_string(loaded.info.model.num_classes));
  }
  if (out.empty()) out = checkpoint.parent_path();
  if (cache.empty()) cache = out / "cache";
  const FeatureSet set = featurize_dataset(index, loaded.info.frontend, cache);
  const CvSplit split = make_cv_splits(index).at(static_cast<std::size_t>(fold - 1));
  const Normalization norm{loaded.info.input_mean, loaded.info.input_std};
  const Evaluation eval = evaluate(loaded.model, set, split.test, norm, 32);

  TrainReport report;
  report.class_names = index.class_names;
  FoldReport fr;
  fr.fold = fold;
  fr.final_accuracy = eval.accuracy;
  fr.best_accuracy = eval.accuracy;
  fr.confusion = eval.confusion;
  report.folds.push_back(fr);
  report.mean_accuracy = eval.accuracy;
  const fs::path eval_dir = out / ("eval_fold" + std::to_string(fold));
  export_metrics(report, eval_dir);
  std::cout << "fold " << fold << " clips " << split.test.size() << " loss " << fmt4(eval.loss) << "\n";
  std::cout << "accuracy " << fmt4(eval.accuracy) << "\n";
  return 0;
}

int cmd_attn(const fs::path& checkpoint, const fs::path& clip, const fs::path& out) {
  Loaded loaded = load_model(checkpoint);
  const Waveform wave = load_wav(clip);
  const FeatureMap features = to_feature_map(extract_log_mel(wave, loaded.info.frontend));
  const Normalization norm{loaded.info.input_mean, loaded.info.input_std};
  const AttentionExport ex = export_attention(loaded.model, features, norm, clip.stem().string(), out);
  const auto& names = loaded.info.class_names;
  std::cout << "wrote " << ex.dir.string() << "\n";
  std::cout << "predicted " << (ex.predicted < names.size() ? names[ex.predicted] : std::to_string(ex.predicted))
            << " p=" << fmt4(ex.probabilities[ex.predicted]) << "\n";
  return 0;
}

int cmd_goldens(const fs::path& out) {
  const auto fixtures = write_goldens(out);
  for (const auto& f : fixtures) std::cout << f.name << "\n";
  std::cout << fixtures.size() << " fixtures in " << out.string() << "\n";
  return 0;
}

int cmd_synth(const fs::path& out, const std::string& classes, std::size_t clips, std::uint64_t seed,
              const FrontendParams& params) {
  SynthSpec spec;
  const bool numeric = !classes.empty() && classes.find_first_not_of("0123456789") == std::string::npos;
  if (numeric) {
    spec.classes = default_synth_classes(std::stoul(classes));
  } else {
    std::stringstream ss(classes);
    for (std::string item; std::getline(ss, item, ',');) spec.classes.push_back(item);
  }
  spec.clips_per_class = clips;
  spec.seed = seed;
  spec.seconds = params.seconds;
  spec.sample_rate = params.sample_rate;
  const DatasetIndex index = synth_dataset(spec, out);
  std::cout << "wrote " << index.entries.size() << " clips, " << index.num_classes << " classes, metadata "
            << (out / "meta.csv").string() << "\n";
  return 0;
}

int cmd_ablate(const TrainOverrides& flags, const std::string& heads_text, const std::string& mixups_text,
               const std::string& seeds_text) {
  TrainConfig config = flags.resolve();
  echo_config(config);
  std::vector<HeadKind> heads;
  std::vector<std::optional<double>> mixups;
  std::vector<std::uint64_t> seeds;
  std::string item;
  for (std::stringstream ss(heads_text); std::getline(ss, item, ',');) heads.push_back(parse_head(item));
  for (std::stringstream ss(mixups_text); std::getline(ss, item, ',');) mixups.push_back(parse_mixup(item));
  for (std::stringstream ss(seeds_text); std::getline(ss, item, ',');) {
    try {
      seeds.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw UsageError("--seeds: '" + item + "' is not a seed");
    }
  }
  const AblationReport report = run_ablation(config, heads, mixups, seeds, &std::cout);
  std::ifstream md(config.run_dir() / "ablation" / "ablation.md");
  std::cout << md.rdbuf();
  for (const auto& arm : report.arms) {
    std::cout << "arm " << head_name(arm.head) << " mixup " << (arm.mixup ? fmt4(*arm.mixup) : "off")
              << " mean accuracy " << fmt4(arm.mean_accuracy) << "\n";
  }
  return 0;
}

void add_frontend_flags(CLI::App& cmd, FrontendParams& p) {
  cmd.add_option("--rate", p.sample_rate, "Target sample rate (Hz)");
  cmd.add_option("--seconds", p.seconds, "Clip duration (s)");
  cmd.add_option("--mels", p.n_mels, "Mel bands");
  cmd.add_option("--hop", p.hop, "STFT hop (samples)");
  cmd.add_option("--win", p.win, "STFT window (samples)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FPAM environmental sound classification toolkit"};
  app.require_subcommand(1);

  FrontendParams feat_params;
  fs::path feat_data, feat_meta, feat_out;
  auto* featurize = app.add_subcommand("featurize", "Compute and cache log-Mel features");
  featurize->add_option("--data", feat_data, "Audio directory")->required();
  featurize->add_option("--meta", feat_meta, "Metadata CSV")->required();
  featurize->add_option("--out", feat_out, "Cache directory")->required();
  add_frontend_flags(*featurize, feat_params);

  TrainOverrides train_flags;
  auto* train = app.add_subcommand("train", "Cross-validated training");
  train_flags.attach(*train);

  fs::path eval_ckpt, eval_meta, eval_data, eval_out, eval_cache;
  int eval_fold = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one test fold");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--meta", eval_meta, "Metadata CSV")->required();
  eval->add_option("--fold", eval_fold, "Test fold (1..5)")->required();
  eval->add_option("--data", eval_data, "Audio directory");
  eval->add_option("--out", eval_out, "Report directory (default: next to the checkpoint)");
  eval->add_option("--cache", eval_cache, "Feature cache directory");

  fs::path attn_ckpt, attn_clip, attn_out;
  auto* attn = app.add_subcommand("attn", "Export attention maps for one clip");
  attn->add_option("--checkpoint", attn_ckpt, "Checkpoint file")->required();
  attn->add_option("--clip", attn_clip, "WAV file")->required();
  attn->add_option("--out", attn_out, "Output directory")->required();

  fs::path goldens_out;
  auto* goldens = app.add_subcommand("goldens", "Write frontend golden fixtures");
  goldens->add_option("--out", goldens_out, "Output directory")->required();

  fs::path synth_out;
  std::string synth_classes = "4";
  std::size_t synth_clips = 40;
  std::uint64_t synth_seed = 7;
  FrontendParams synth_params;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--classes", synth_classes, "Class count or comma-separated names");
  synth->add_option("--clips", synth_clips, "Clips per class");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--rate", synth_params.sample_rate, "Sample rate (Hz)");
  synth->add_option("--seconds", synth_params.seconds, "Clip duration (s)");

  TrainOverrides ablate_flags;
  std::string ablate_heads = "baseline,fpam";
  std::string ablate_mixups = "off,0.2";
  std::string ablate_seeds = "1";
  auto* ablate = app.add_subcommand("ablate", "Head and mixup ablation over seeds");
  ablate_flags.attach(*ablate);
  ablate->add_option("--heads", ablate_heads, "Comma-separated heads (fpam, baseline)");
  ablate->add_option("--mixups", ablate_mixups, "Comma-separated mixup settings (off or alpha)");
  ablate->add_option("--seeds", ablate_seeds, "Comma-separated seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  flush_denormals_to_zero();
  try {
    if (*featurize) return cmd_featurize(feat_data, feat_meta, feat_out, feat_params);
    if (*train) return cmd_train(train_flags);
    if (*eval) return cmd_eval(eval_ckpt, eval_meta, eval_fold, eval_data, eval_out, eval_cache);
    if (*attn) return cmd_attn(attn_ckpt, attn_clip, attn_out);
    if (*goldens) return cmd_goldens(goldens_out);
    if (*synth) return cmd_synth(synth_out, synth_classes, synth_clips, synth_seed, synth_params);
    if (*ablate) return cmd_ablate(ablate_flags, ablate_heads, ablate_mixups, ablate_seeds);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
