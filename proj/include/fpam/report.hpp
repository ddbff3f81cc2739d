#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fpam/feature_cache.hpp"
#include "fpam/training.hpp"

namespace fpam {

// Per-fold curves (fold<k>/curves.csv), fold-averaged curves (curves.csv),
// confusion matrices (confusion_fold<k>.csv) and summary.csv.
void export_metrics(const TrainReport& report, const std::filesystem::path& out_dir);

// ablation.csv and ablation.md in `out_dir`.
void write_ablation_table(const AblationReport& report, const std::filesystem::path& out_dir);

// Spatial attention map of one scale at its native grid and nearest-resampled
// onto the T x M spectrogram grid, row-major.
struct AttentionMap {
  std::string scale;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> native;
  std::size_t frames = 0;
  std::size_t mels = 0;
  std::vector<double> upsampled;

  double at(std::size_t frame, std::size_t mel) const { return upsampled[frame * mels + mel]; }
};

struct AttentionExport {
  std::filesystem::path dir;
  std::array<AttentionMap, kNumScales> maps;
  std::vector<double> channel_gate;
  std::vector<double> probabilities;
  std::size_t predicted = 0;
};

// Runs the model on one clip and writes <out_dir>/attn/<clip_id>/ with
// <scale>.pgm and <scale>.csv per scale, spectrogram.pgm and channel_gate.csv.
// Requires the attention head.
AttentionExport export_attention(const Model& model, const FeatureMap& features, const Normalization& norm,
                                 const std::string& clip_id, const std::filesystem::path& out_dir);

// 8-bit binary greymap (P5).
struct Greymap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

void write_pgm(const std::filesystem::path& path, const Greymap& image);
Greymap read_pgm(const std::filesystem::path& path);

}  // namespace fpam
