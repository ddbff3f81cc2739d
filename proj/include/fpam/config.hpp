#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fpam/frontend.hpp"

namespace fpam {

// Line-oriented `key = value` file with `[section]` headers and `#` comments.
class IniFile {
 public:
  using Section = std::map<std::string, std::string>;

  static IniFile parse(std::istream& in);
  static IniFile load(const std::filesystem::path& path);

  std::optional<std::string> get(const std::string& section, const std::string& key) const;
  void set(const std::string& section, const std::string& key, std::string value);
  const std::map<std::string, Section>& sections() const { return sections_; }

 private:
  std::map<std::string, Section> sections_;
};

// Full experiment description. Precedence: preset defaults < config file <
// command-line flags.
struct TrainConfig {
  // [run]
  std::string name = "run";
  std::filesystem::path out_dir = "runs";
  std::uint64_t seed = 1;
  int precision = 32;
  // [model]
  std::string preset = "tiny";
  std::string head = "fpam";
  std::size_t aligned_channels = 0;  // 0 selects the Res-4 width of the preset
  // [train]
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double lr0 = 0.01;
  double lr_decay = 0.1;
  std::size_t lr_step = 20;
  double momentum = 0.9;
  std::optional<double> mixup_alpha;  // nullopt = off
  std::optional<double> grad_clip;    // global gradient-norm bound; nullopt = off
  std::vector<int> folds;             // empty = all five
  // [data]
  std::filesystem::path meta;
  std::filesystem::path audio_dir;  // empty = derived from the metadata location
  std::filesystem::path cache_dir;  // empty = <out_dir>/<name>/cache
  std::vector<std::string> synthetic_classes;  // non-empty generates a synthetic set
  std::size_t synthetic_clips = 40;
  std::uint64_t synthetic_seed = 7;
  std::filesystem::path synthetic_dir;  // empty = <out_dir>/<name>/data
  // [frontend]
  FrontendParams frontend;

  std::filesystem::path run_dir() const { return out_dir / name; }
  std::vector<int> resolved_folds() const;
  void validate() const;
};

// Overlays every key of `ini` onto `base`. Unknown sections or keys and
// unparsable values raise ConfigError naming the key and section.
TrainConfig apply_config(TrainConfig base, const IniFile& ini);

// Canonical resolved form; parsing it back yields the same configuration.
std::string to_ini(const TrainConfig& config);

// "off" or a positive alpha.
std::optional<double> parse_mixup(const std::string& text);
// "off" or a positive gradient-norm bound.
std::optional<double> parse_grad_clip(const std::string& text);
// "all" or a comma-separated list of folds in 1..5.
std::vector<int> parse_folds(const std::string& text);

}  // namespace fpam
