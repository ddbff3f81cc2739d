#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fpam/wav.hpp"

namespace fpam {

struct DatasetEntry {
  std::string filename;
  int fold = 0;  // 1..5
  int target = 0;
  std::string category;
};

struct DatasetIndex {
  std::vector<DatasetEntry> entries;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;  // by class id
  std::filesystem::path audio_dir;
};

constexpr int kNumFolds = 5;

// ESC-style metadata: header with at least filename,fold,target,category;
// extra columns ignored. Filenames must be unique, folds in 1..5 and class ids
// contiguous from 0.
DatasetIndex parse_metadata(std::istream& csv);
DatasetIndex load_metadata(const std::filesystem::path& csv_path);

struct CvSplit {
  int test_fold = 0;
  std::vector<std::size_t> train;  // indices into DatasetIndex::entries
  std::vector<std::size_t> test;
};

// Split k tests on fold k and trains on the other four.
std::vector<CvSplit> make_cv_splits(const DatasetIndex& index);

// Desk-scale stand-in for ESC audio.
struct SynthSpec {
  std::vector<std::string> classes;  // names from synth_vocabulary()
  std::size_t clips_per_class = 40;
  double seconds = 5.0;
  int sample_rate = 16000;
  std::uint64_t seed = 7;
};

std::span<const std::string_view> synth_vocabulary();
// First `count` vocabulary entries.
std::vector<std::string> default_synth_classes(std::size_t count);

// One clip of the named class; deterministic in (seed, class, clip).
Waveform synth_clip(std::string_view class_name, std::uint64_t seed, std::size_t class_id, std::size_t clip,
                    double seconds, int sample_rate);

// Writes <out_dir>/audio/*.wav and <out_dir>/meta.csv. Folds are assigned
// round-robin within each class.
DatasetIndex synth_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace fpam
