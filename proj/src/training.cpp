#include "fpam/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "fpam/checkpoint.hpp"
#include "fpam/errors.hpp"
#include "fpam/ops.hpp"
#include "fpam/optim.hpp"
#include "fpam/parallel.hpp"
#include "fpam/report.hpp"

namespace fpam {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t salt) {
  return splitmix64(splitmix64(seed ^ (salt * 0xD1B54A32D192ED03ULL)) + stream);
}

constexpr std::uint64_t kInitSalt = 1;
constexpr std::uint64_t kShuffleSalt = 2;

}  // namespace

double lr_at(const TrainConfig& config, std::size_t epoch) {
  if (epoch >= config.epochs) {
    throw ContractError("lr_at: epoch " + std::to_string(epoch) + " outside a run of " +
                        std::to_string(config.epochs) + " epochs");
  }
  const auto steps = static_cast<double>(epoch / config.lr_step);
  return config.lr0 * std::pow(config.lr_decay, steps);
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= classes_ || predicted >= classes_) throw ContractError("confusion matrix: class id out of range");
  ++counts_[truth * classes_ + predicted];
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < classes_; ++p) s += at(truth, p);
  return s;
}

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

double ConfusionMatrix::accuracy() const {
  const std::size_t n = total();
  if (n == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t c = 0; c < classes_; ++c) correct += at(c, c);
  return static_cast<double>(correct) / static_cast<double>(n);
}

FeatureSet featurize_dataset(const DatasetIndex& index, const FrontendParams& params, const fs::path& cache_dir,
                             std::size_t* cache_hits) {
  const std::size_t n = index.entries.size();
  std::vector<FeatureMap> items(n);
  std::vector<std::string> errors(n);
  std::vector<char> hits(n, 0);
  fs::create_directories(cache_dir);
  parallel_for(n, [&](std::size_t i) {
    const fs::path wav = index.audio_dir / index.entries[i].filename;
    try {
      CachedFeatures cached = featurize_cached(wav, params, cache_dir);
      items[i] = std::move(cached.features);
      hits[i] = cached.hit ? 1 : 0;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  std::ostringstream failed;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i].empty()) continue;
    ++failures;
    failed << "\n  " << (index.audio_dir / index.entries[i].filename).string() << ": " << errors[i];
  }
  if (failures > 0) {
    throw DataError(std::to_string(failures) + " of " + std::to_string(n) + " clips could not be featurized:" +
                    failed.str());
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (items[i].frames != items[0].frames || items[i].mels != items[0].mels) {
      throw DataError("feature shape mismatch at " + index.entries[i].filename);
    }
  }

  FeatureSet set;
  set.items = std::move(items);
  set.labels.reserve(n);
  for (const auto& e : index.entries) set.labels.push_back(e.target);
  set.num_classes = index.num_classes;
  set.class_names = index.class_names;
  if (cache_hits) *cache_hits = static_cast<std::size_t>(std::count(hits.begin(), hits.end(), 1));
  return set;
}

Normalization Normalization::fit(const FeatureSet& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("normalization: empty split");
  double sum = 0.0;
  double sq = 0.0;
  std::size_t count = 0;
  for (std::size_t i : indices) {
    for (float v : data.items.at(i).data) {
      sum += v;
      sq += static_cast<double>(v) * v;
    }
    count += data.items[i].data.size();
  }
  Normalization norm;
  norm.mean = sum / static_cast<double>(count);
  const double var = std::max(0.0, sq / static_cast<double>(count) - norm.mean * norm.mean);
  norm.stddev = var > 1e-12 ? std::sqrt(var) : 1.0;
  return norm;
}

Tensor make_input_batch(const FeatureSet& data, std::span<const std::size_t> indices, const Normalization& norm) {
  if (indices.empty()) throw ContractError("make_input_batch: empty batch");
  const FeatureMap& first = data.items.at(indices[0]);
  const std::size_t plane = first.frames * first.mels;
  std::vector<Real> values(indices.size() * plane);
  const double inv = 1.0 / norm.stddev;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const FeatureMap& f = data.items.at(indices[b]);
    if (f.data.size() != plane) throw ShapeError("make_input_batch: ragged features");
    for (std::size_t k = 0; k < plane; ++k) {
      values[b * plane + k] = static_cast<Real>((f.data[k] - norm.mean) * inv);
    }
  }
  return Tensor(Shape{indices.size(), 1, first.frames, first.mels}, std::move(values));
}

Tensor make_input(const FeatureMap& features, const Normalization& norm) {
  FeatureSet one;
  one.items.push_back(features);
  const std::size_t idx = 0;
  return make_input_batch(one, std::span<const std::size_t>(&idx, 1), norm);
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  std::vector<Real> values(labels.size() * classes, Real(0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ContractError("one_hot: label " + std::to_string(labels[i]) + " out of range");
    }
    values[i * classes + static_cast<std::size_t>(labels[i])] = Real(1);
  }
  return Tensor(Shape{labels.size(), classes}, std::move(values));
}

double sample_beta(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ContractError("sample_beta: alpha must be positive");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  for (;;) {
    const double a = gamma(rng);
    const double b = gamma(rng);
    if (a + b > 0.0) return a / (a + b);
  }
}

MixedBatch mixup_with(const Tensor& inputs, const Tensor& targets, double lambda,
                      std::span<const std::size_t> permutation) {
  const std::size_t n = inputs.dim(0);
  if (targets.dim(0) != n || permutation.size() != n) throw ShapeError("mixup: batch size mismatch");
  const auto mix = [&](const Tensor& t) {
    const std::size_t row = t.numel() / n;
    const auto src = t.values();
    std::vector<Real> out(t.numel());
    const Real l = static_cast<Real>(lambda);
    const Real r = static_cast<Real>(1.0 - lambda);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = permutation[i];
      if (j >= n) throw ContractError("mixup: permutation index out of range");
      for (std::size_t k = 0; k < row; ++k) out[i * row + k] = l * src[i * row + k] + r * src[j * row + k];
    }
    return Tensor(t.shape(), std::move(out));
  };
  MixedBatch batch;
  batch.inputs = mix(inputs);
  batch.targets = mix(targets);
  batch.lambda = lambda;
  batch.permutation.assign(permutation.begin(), permutation.end());
  return batch;
}

MixedBatch mixup(const Tensor& inputs, const Tensor& targets, double alpha, Rng& rng) {
  const double lambda = sample_beta(alpha, rng);
  std::vector<std::size_t> perm(inputs.dim(0));
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  return mixup_with(inputs, targets, lambda, perm);
}

std::size_t argmax(std::span<const Real> row) {
  if (row.empty()) throw ContractError("argmax: empty row");
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

Evaluation evaluate(const Model& model, const FeatureSet& data, std::span<const std::size_t> indices,
                    const Normalization& norm, std::size_t batch_size) {
  if (indices.empty()) throw ContractError("evaluate: empty split");
  NoGradGuard no_grad;
  const std::size_t classes = model.config().num_classes;
  Evaluation eval{0.0, 0.0, ConfusionMatrix(classes)};
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto batch = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const Tensor logits = model.logits(make_input_batch(data, batch, norm));
    const auto v = logits.values();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto row = v.subspan(b * classes, classes);
      const auto truth = static_cast<std::size_t>(data.labels.at(batch[b]));
      const double peak = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (Real x : row) z += std::exp(static_cast<double>(x) - peak);
      loss_sum += std::log(z) + peak - static_cast<double>(row[truth]);
      eval.confusion.add(truth, argmax(row));
    }
  }
  eval.loss = loss_sum / static_cast<double>(indices.size());
  eval.accuracy = eval.confusion.accuracy();
  return eval;
}

ModelConfig model_config_for(const TrainConfig& config, std::size_t num_classes) {
  ModelConfig mc;
  mc.backbone = BackboneConfig::preset(config.preset);
  mc.head = parse_head(config.head);
  mc.num_classes = num_classes;
  mc.aligned_channels = config.aligned_channels;
  return mc;
}

namespace {

void save_with_info(const fs::path& path, const Model& model, const TrainConfig& config, const Normalization& norm,
                    const FeatureSet& data, int fold, std::size_t epoch, double accuracy) {
  save_checkpoint(path, model.params());
  CheckpointInfo info;
  info.model = model.config();
  info.input_mean = norm.mean;
  info.input_std = norm.stddev;
  info.frontend = config.frontend;
  info.class_names = data.class_names;
  info.fold = fold;
  info.epoch = epoch;
  info.test_accuracy = accuracy;
  write_checkpoint_info(path, info);
}

FoldReport train_fold(const TrainConfig& config, const FeatureSet& data, const CvSplit& split,
                      const fs::path& fold_dir, std::ostream* log) {
  const ModelConfig mc = model_config_for(config, data.num_classes);
  const auto fold = static_cast<std::uint64_t>(split.test_fold);
  Model model(mc, derive_seed(config.seed, fold, kInitSalt));
  Rng rng(derive_seed(config.seed, fold, kShuffleSalt));
  const Normalization norm = Normalization::fit(data, split.train);
  if (!fold_dir.empty()) fs::create_directories(fold_dir);

  FoldReport report;
  report.fold = split.test_fold;
  std::vector<std::size_t> order = split.train;
  std::vector<int> labels;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(config, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const auto batch =
          std::span<const std::size_t>(order).subspan(start, std::min(config.batch_size, order.size() - start));
      labels.clear();
      for (std::size_t i : batch) labels.push_back(data.labels[i]);
      Tensor x = make_input_batch(data, batch, norm);
      Tensor y = one_hot(labels, data.num_classes);
      if (config.mixup_alpha) {
        MixedBatch mixed = mixup(x, y, *config.mixup_alpha, rng);
        x = mixed.inputs;
        y = mixed.targets;
      }
      model.params().zero_grad();
      const Tensor logits = model.logits(x);
      const Tensor loss = softmax_cross_entropy(logits, y);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite training loss in fold " + std::to_string(split.test_fold) + ", epoch " +
                           std::to_string(epoch + 1) + ", batch " + std::to_string(batch_index + 1));
      }
      backward(loss);
      const double scale = config.grad_clip ? clip_scale(grad_norm(model.params()), *config.grad_clip) : 1.0;
      sgd_momentum_step(model.params(), static_cast<Real>(lr), static_cast<Real>(config.momentum),
                        static_cast<Real>(scale));

      loss_sum += value * static_cast<double>(batch.size());
      const auto lv = logits.values();
      const auto yv = y.values();
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto row = lv.subspan(b * data.num_classes, data.num_classes);
        const auto target = yv.subspan(b * data.num_classes, data.num_classes);
        if (argmax(row) == argmax(target)) ++correct;
      }
    }

    const Evaluation test = evaluate(model, data, split.test, norm, config.batch_size);
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.lr = lr;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    stats.test_loss = test.loss;
    stats.test_accuracy = test.accuracy;
    report.epochs.push_back(stats);

    if (report.best_epoch == 0 || test.accuracy > report.best_accuracy) {
      report.best_epoch = stats.epoch;
      report.best_accuracy = test.accuracy;
      if (!fold_dir.empty()) {
        save_with_info(fold_dir / "best.ckpt", model, config, norm, data, split.test_fold, stats.epoch,
                       test.accuracy);
      }
    }
    if (stats.epoch == config.epochs) {
      report.final_accuracy = test.accuracy;
      report.confusion = test.confusion;
      if (!fold_dir.empty()) {
        save_with_info(fold_dir / "final.ckpt", model, config, norm, data, split.test_fold, stats.epoch,
                       test.accuracy);
      }
    }
    if (log) {
      *log << "fold " << split.test_fold << " epoch " << stats.epoch << "/" << config.epochs << std::fixed
           << std::setprecision(4) << " lr " << stats.lr << " train_loss " << stats.train_loss << " train_acc "
           << stats.train_accuracy << " test_loss " << stats.test_loss << " test_acc " << stats.test_accuracy
           << std::defaultfloat << "\n"
           << std::flush;
    }
  }
  return report;
}

}  // namespace

TrainReport train(const TrainConfig& config, const DatasetIndex& index, const FeatureSet& data,
                  const fs::path& run_dir, std::ostream* log) {
  config.validate();
  if (data.items.size() != index.entries.size()) throw ContractError("train: features do not match the index");
  const std::vector<CvSplit> splits = make_cv_splits(index);
  TrainReport report;
  report.class_names = data.class_names;
  for (int fold : config.resolved_folds()) {
    const CvSplit& split = splits.at(static_cast<std::size_t>(fold - 1));
    const fs::path fold_dir = run_dir.empty() ? fs::path() : run_dir / ("fold" + std::to_string(fold));
    report.folds.push_back(train_fold(config, data, split, fold_dir, log));
  }
  double sum = 0.0;
  for (const auto& f : report.folds) sum += f.final_accuracy;
  report.mean_accuracy = report.folds.empty() ? 0.0 : sum / static_cast<double>(report.folds.size());
  return report;
}

PreparedData prepare_data(const TrainConfig& config, std::ostream* log) {
  PreparedData prepared;
  if (!config.synthetic_classes.empty()) {
    SynthSpec spec;
    spec.classes = config.synthetic_classes;
    spec.clips_per_class = config.synthetic_clips;
    spec.seconds = config.frontend.seconds;
    spec.sample_rate = config.frontend.sample_rate;
    spec.seed = config.synthetic_seed;
    const fs::path dir = config.synthetic_dir.empty() ? config.run_dir() / "data" : config.synthetic_dir;
    prepared.index = synth_dataset(spec, dir);
    if (log) {
      *log << "synthetic set: " << spec.classes.size() << " classes x " << spec.clips_per_class << " clips in "
           << dir.string() << "\n";
    }
  } else {
    if (config.meta.empty()) throw ConfigError("no metadata file configured ([data] meta)");
    prepared.index = load_metadata(config.meta);
  }
  if (!config.audio_dir.empty()) prepared.index.audio_dir = config.audio_dir;

  const fs::path cache_dir = config.cache_dir.empty() ? config.run_dir() / "cache" : config.cache_dir;
  prepared.features = featurize_dataset(prepared.index, config.frontend, cache_dir, &prepared.cache_hits);
  if (log) {
    *log << "features: " << prepared.features.items.size() << " clips, " << prepared.cache_hits
         << " from cache\n";
  }
  return prepared;
}

TrainReport run_experiment(const TrainConfig& config, std::ostream* log) {
  config.validate();
  const fs::path run_dir = config.run_dir();
  fs::create_directories(run_dir);
  {
    std::ofstream out(run_dir / "config.ini", std::ios::binary);
    out << to_ini(config);
  }
  const PreparedData prepared = prepare_data(config, log);
  TrainReport report = train(config, prepared.index, prepared.features, run_dir, log);
  export_metrics(report, run_dir);
  return report;
}

namespace {

std::string mixup_tag(const std::optional<double>& alpha) {
  if (!alpha) return "nomix";
  std::ostringstream out;
  out << "mix" << *alpha;
  return out.str();
}

}  // namespace

AblationReport run_ablation(const TrainConfig& base, const std::vector<HeadKind>& heads,
                            const std::vector<std::optional<double>>& mixups, const std::vector<std::uint64_t>& seeds,
                            std::ostream* log) {
  if (heads.empty() || mixups.empty() || seeds.empty()) throw ContractError("ablation: empty arm list");
  base.validate();
  const PreparedData prepared = prepare_data(base, log);
  AblationReport report;
  for (HeadKind head : heads) {
    for (const auto& alpha : mixups) {
      AblationArm arm;
      arm.head = head;
      arm.mixup = alpha;
      arm.seeds = seeds;
      for (std::uint64_t seed : seeds) {
        TrainConfig config = base;
        config.head = head_name(head);
        config.mixup_alpha = alpha;
        config.seed = seed;
        config.name = base.name + "/ablation/" + head_name(head) + "-" + mixup_tag(alpha) + "-s" + std::to_string(seed);
        if (log) *log << "arm " << head_name(head) << " " << mixup_tag(alpha) << " seed " << seed << "\n";
        const fs::path run_dir = config.run_dir();
        fs::create_directories(run_dir);
        {
          std::ofstream out(run_dir / "config.ini", std::ios::binary);
          out << to_ini(config);
        }
        const TrainReport run = train(config, prepared.index, prepared.features, run_dir, log);
        export_metrics(run, run_dir);
        arm.accuracies.push_back(run.mean_accuracy);
      }
      arm.mean_accuracy = std::accumulate(arm.accuracies.begin(), arm.accuracies.end(), 0.0) /
                          static_cast<double>(arm.accuracies.size());
      report.arms.push_back(std::move(arm));
    }
  }
  write_ablation_table(report, base.run_dir() / "ablation");
  return report;
}

}  // namespace fpam
