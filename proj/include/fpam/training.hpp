#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpam/config.hpp"
#include "fpam/dataset.hpp"
#include "fpam/feature_cache.hpp"
#include "fpam/model.hpp"

namespace fpam {

// Step schedule: lr0 * lr_decay^floor(epoch / lr_step). Epochs past the
// configured total are a contract error.
double lr_at(const TrainConfig& config, std::size_t epoch);

class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

  void add(std::size_t truth, std::size_t predicted);
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }
  std::size_t classes() const { return classes_; }
  std::size_t row_sum(std::size_t truth) const;
  std::size_t total() const;
  double accuracy() const;

 private:
  std::size_t classes_ = 0;
  std::vector<std::size_t> counts_;
};

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double test_loss = 0;
  double test_accuracy = 0;
};

struct FoldReport {
  int fold = 0;
  std::vector<EpochStats> epochs;
  double final_accuracy = 0;
  std::size_t best_epoch = 0;
  double best_accuracy = 0;
  ConfusionMatrix confusion;  // of the final model on the test fold
};

struct TrainReport {
  std::vector<FoldReport> folds;
  double mean_accuracy = 0;
  std::vector<std::string> class_names;
};

struct FeatureSet {
  std::vector<FeatureMap> items;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
};

// Featurizes every entry through the cache. Missing or unreadable clips are
// collected and reported together in one DataError.
FeatureSet featurize_dataset(const DatasetIndex& index, const FrontendParams& params,
                             const std::filesystem::path& cache_dir, std::size_t* cache_hits = nullptr);

// Global standardization fitted on the training split.
struct Normalization {
  double mean = 0.0;
  double stddev = 1.0;

  static Normalization fit(const FeatureSet& data, std::span<const std::size_t> indices);
};

// N x 1 x T x M network input.
Tensor make_input_batch(const FeatureSet& data, std::span<const std::size_t> indices, const Normalization& norm);
Tensor make_input(const FeatureMap& features, const Normalization& norm);
Tensor one_hot(std::span<const int> labels, std::size_t classes);

struct MixedBatch {
  Tensor inputs;
  Tensor targets;
  double lambda = 1.0;
  std::vector<std::size_t> permutation;
};

// Beta(alpha, alpha) via two gamma draws.
double sample_beta(double alpha, Rng& rng);
// x' = lambda x + (1 - lambda) x[perm], same for the targets, with lambda ~
// Beta(alpha, alpha) and a uniformly random permutation.
MixedBatch mixup(const Tensor& inputs, const Tensor& targets, double alpha, Rng& rng);
MixedBatch mixup_with(const Tensor& inputs, const Tensor& targets, double lambda,
                      std::span<const std::size_t> permutation);

// Index of the largest value; ties resolve to the lowest index.
std::size_t argmax(std::span<const Real> row);

struct Evaluation {
  double accuracy = 0;
  double loss = 0;
  ConfusionMatrix confusion;
};

Evaluation evaluate(const Model& model, const FeatureSet& data, std::span<const std::size_t> indices,
                    const Normalization& norm, std::size_t batch_size);

ModelConfig model_config_for(const TrainConfig& config, std::size_t num_classes);

// Cross-validated training on prepared features. When `run_dir` is non-empty,
// fold<k>/final.ckpt and fold<k>/best.ckpt (with .json metadata) are written.
TrainReport train(const TrainConfig& config, const DatasetIndex& index, const FeatureSet& data,
                  const std::filesystem::path& run_dir, std::ostream* log);

struct PreparedData {
  DatasetIndex index;
  FeatureSet features;
  std::size_t cache_hits = 0;
};

// Generates the synthetic set if configured, loads the metadata and
// featurizes every clip through the cache.
PreparedData prepare_data(const TrainConfig& config, std::ostream* log);

// prepare_data + train + metric export under config.run_dir().
TrainReport run_experiment(const TrainConfig& config, std::ostream* log);

struct AblationArm {
  HeadKind head = HeadKind::kFpam;
  std::optional<double> mixup;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;  // mean CV accuracy per seed
  double mean_accuracy = 0;
};

struct AblationReport {
  std::vector<AblationArm> arms;
};

// Every head x mixup combination, each trained once per seed on the same
// prepared data. Runs land in <run_dir>/ablation/<head>-<mixup>-s<seed>.
AblationReport run_ablation(const TrainConfig& base, const std::vector<HeadKind>& heads,
                            const std::vector<std::optional<double>>& mixups, const std::vector<std::uint64_t>& seeds,
                            std::ostream* log);

}  // namespace fpam
