#include "fpam/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "fpam/errors.hpp"

namespace fpam {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  fields.push_back(field);
  return fields;
}

int parse_int(const std::string& text, const std::string& column, std::size_t line) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw DataError("metadata line " + std::to_string(line) + ": column '" + column + "' is not an integer: '" +
                    text + "'");
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::array<std::string_view, 8> kVocabulary{
    "pure_tone",        "linear_chirp",   "white_noise",    "am_tone",
    "tone_burst_train", "harmonic_stack", "filtered_noise", "silence_click",
};

constexpr double kTwoPi = 2.0 * std::numbers::pi;

}  // namespace

DatasetIndex parse_metadata(std::istream& csv) {
  std::string line;
  if (!std::getline(csv, line)) throw DataError("metadata: empty file");
  const auto header = split_csv_line(line);
  auto column = [&](const char* name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(std::string("metadata: missing column '") + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_file = column("filename");
  const std::size_t c_fold = column("fold");
  const std::size_t c_target = column("target");
  const std::size_t c_category = column("category");
  const std::size_t needed = std::max({c_file, c_fold, c_target, c_category}) + 1;

  DatasetIndex index;
  std::set<std::string> seen;
  std::map<int, std::string> names;
  std::size_t line_no = 1;
  while (std::getline(csv, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() < needed) {
      throw DataError("metadata line " + std::to_string(line_no) + ": expected at least " + std::to_string(needed) +
                      " fields");
    }
    DatasetEntry e;
    e.filename = fields[c_file];
    e.fold = parse_int(fields[c_fold], "fold", line_no);
    e.target = parse_int(fields[c_target], "target", line_no);
    e.category = fields[c_category];
    if (e.filename.empty()) throw DataError("metadata line " + std::to_string(line_no) + ": empty filename");
    if (e.fold < 1 || e.fold > kNumFolds) {
      throw DataError("metadata line " + std::to_string(line_no) + ": fold " + std::to_string(e.fold) +
                      " outside 1..5");
    }
    if (e.target < 0) throw DataError("metadata line " + std::to_string(line_no) + ": negative target");
    if (!seen.insert(e.filename).second) {
      throw DataError("metadata line " + std::to_string(line_no) + ": duplicated filename '" + e.filename + "'");
    }
    names.emplace(e.target, e.category);
    index.entries.push_back(std::move(e));
  }
  if (index.entries.empty()) throw DataError("metadata: no entries");
  index.num_classes = static_cast<std::size_t>(names.rbegin()->first) + 1;
  if (names.size() != index.num_classes) {
    throw DataError("metadata: class ids are not contiguous (" + std::to_string(names.size()) +
                    " distinct ids, max " + std::to_string(index.num_classes - 1) + ")");
  }
  for (const auto& [id, name] : names) index.class_names.push_back(name);
  return index;
}

DatasetIndex load_metadata(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open metadata " + csv_path.string());
  DatasetIndex index;
  try {
    index = parse_metadata(in);
  } catch (const DataError& e) {
    throw DataError(csv_path.string() + ": " + e.what());
  }
  const auto dir = csv_path.parent_path();
  for (const auto& candidate : {dir / "audio", dir.parent_path() / "audio"}) {
    if (std::filesystem::is_directory(candidate)) {
      index.audio_dir = candidate;
      return index;
    }
  }
  index.audio_dir = dir;
  return index;
}

std::vector<CvSplit> make_cv_splits(const DatasetIndex& index) {
  std::vector<CvSplit> splits(kNumFolds);
  for (int k = 0; k < kNumFolds; ++k) splits[static_cast<std::size_t>(k)].test_fold = k + 1;
  for (std::size_t i = 0; i < index.entries.size(); ++i) {
    const int fold = index.entries[i].fold;
    if (fold < 1 || fold > kNumFolds) throw DataError("entry " + index.entries[i].filename + " has invalid fold");
    for (auto& split : splits) (split.test_fold == fold ? split.test : split.train).push_back(i);
  }
  for (const auto& split : splits) {
    if (split.test.empty()) throw DataError("fold " + std::to_string(split.test_fold) + " is empty");
  }
  return splits;
}

std::span<const std::string_view> synth_vocabulary() { return kVocabulary; }

std::vector<std::string> default_synth_classes(std::size_t count) {
  if (count == 0 || count > kVocabulary.size()) {
    throw ConfigError("synthetic dataset: class count must be 1.." + std::to_string(kVocabulary.size()));
  }
  return {kVocabulary.begin(), kVocabulary.begin() + static_cast<long>(count)};
}

Waveform synth_clip(std::string_view class_name, std::uint64_t seed, std::size_t class_id, std::size_t clip,
                    double seconds, int sample_rate) {
  const auto kind = std::find(kVocabulary.begin(), kVocabulary.end(), class_name);
  if (kind == kVocabulary.end()) throw ConfigError("synthetic dataset: unknown class '" + std::string(class_name) + "'");

  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(class_id * 1000003ULL + clip)));
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  std::normal_distribution<double> gauss(0.0, 1.0);

  const auto n = static_cast<std::size_t>(std::llround(seconds * sample_rate));
  const double rate = sample_rate;
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(n, 0.0);
  auto& s = w.samples;

  const double amp = uniform(0.2, 0.8);
  switch (kind - kVocabulary.begin()) {
    case 0: {  // pure tone
      const double f = uniform(300, 3000), phase = uniform(0, kTwoPi);
      for (std::size_t i = 0; i < n; ++i) s[i] = amp * std::sin(kTwoPi * f * i / rate + phase);
      break;
    }
    case 1: {  // linear chirp
      const double f0 = uniform(200, 1000), f1 = uniform(2000, 6000), phase = uniform(0, kTwoPi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = i / rate;
        s[i] = amp * std::sin(kTwoPi * (f0 * t + (f1 - f0) * t * t / (2 * seconds)) + phase);
      }
      break;
    }
    case 2: {  // white noise
      const double level = amp * 0.3;
      for (auto& v : s) v = std::clamp(level * gauss(rng), -1.0, 1.0);
      break;
    }
    case 3: {  // amplitude-modulated tone
      const double fc = uniform(500, 2500), fm = uniform(2, 8), depth = uniform(0.7, 1.0);
      const double phase = uniform(0, kTwoPi), mod_phase = uniform(0, kTwoPi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = i / rate;
        const double envelope = 1.0 - depth * 0.5 * (1.0 - std::cos(kTwoPi * fm * t + mod_phase));
        s[i] = amp * envelope * std::sin(kTwoPi * fc * t + phase);
      }
      break;
    }
    case 4: {  // tone burst train
      const double f = uniform(800, 3000), burst = uniform(0.05, 0.15), period = uniform(0.3, 0.6);
      const double offset = uniform(0, period);
      const double ramp = 0.005;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = i / rate;
        const double local = std::fmod(t + period - offset, period);
        if (local >= burst) continue;
        const double gate = std::min({1.0, local / ramp, (burst - local) / ramp});
        s[i] = amp * gate * std::sin(kTwoPi * f * t);
      }
      break;
    }
    case 5: {  // harmonic stack
      const double f0 = uniform(100, 400), phase = uniform(0, kTwoPi);
      constexpr int kHarmonics = 6;
      double norm = 0;
      for (int h = 1; h <= kHarmonics; ++h) norm += 1.0 / h;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0;
        for (int h = 1; h <= kHarmonics; ++h) {
          if (h * f0 < rate / 2) acc += std::sin(kTwoPi * h * f0 * i / rate + h * phase) / h;
        }
        s[i] = amp * acc / norm;
      }
      break;
    }
    case 6: {  // band-pass filtered noise (RBJ biquad, constant peak gain)
      const double fc = uniform(1000, 5000), q = uniform(2, 6);
      const double w0 = kTwoPi * fc / rate, alpha = std::sin(w0) / (2 * q);
      const double a0 = 1 + alpha;
      const double b0 = alpha / a0, b2 = -alpha / a0, a1 = -2 * std::cos(w0) / a0, a2 = (1 - alpha) / a0;
      double x1 = 0, x2 = 0, y1 = 0, y2 = 0, peak = 0;
      for (auto& v : s) {
        const double x = gauss(rng);
        const double y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = x;
        y2 = y1;
        y1 = y;
        v = y;
        peak = std::max(peak, std::abs(y));
      }
      for (auto& v : s) v *= amp / peak;
      break;
    }
    case 7: {  // silence with a few clicks
      const int clicks = std::uniform_int_distribution<int>(1, 4)(rng);
      for (int c = 0; c < clicks; ++c) {
        const auto at = static_cast<std::size_t>(uniform(0.05, 0.95) * static_cast<double>(n));
        const double height = uniform(0.5, 0.9);
        for (std::size_t k = 0; k < 8 && at + k < n; ++k) s[at + k] += height * std::pow(0.5, k) * (k % 2 ? -1 : 1);
      }
      break;
    }
  }
  return w;
}

DatasetIndex synth_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.classes.empty()) throw ConfigError("synthetic dataset: no classes");
  if (spec.classes.size() > kVocabulary.size()) {
    throw ConfigError("synthetic dataset: " + std::to_string(spec.classes.size()) + " classes requested, vocabulary has " +
                      std::to_string(kVocabulary.size()));
  }
  if (spec.clips_per_class == 0) throw ConfigError("synthetic dataset: clips per class must be positive");
  const auto audio = out_dir / "audio";
  std::filesystem::create_directories(audio);

  DatasetIndex index;
  index.num_classes = spec.classes.size();
  index.class_names = spec.classes;
  index.audio_dir = audio;
  std::ofstream meta(out_dir / "meta.csv");
  if (!meta) throw DataError("cannot write " + (out_dir / "meta.csv").string());
  meta << "filename,fold,target,category\n";
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    for (std::size_t i = 0; i < spec.clips_per_class; ++i) {
      DatasetEntry e;
      e.fold = static_cast<int>(i % kNumFolds) + 1;
      e.target = static_cast<int>(c);
      e.category = spec.classes[c];
      std::ostringstream name;
      name << e.fold << "-" << spec.seed << "-" << c << "-" << i << ".wav";
      e.filename = name.str();
      write_wav(audio / e.filename, synth_clip(spec.classes[c], spec.seed, c, i, spec.seconds, spec.sample_rate));
      meta << e.filename << ',' << e.fold << ',' << e.target << ',' << e.category << '\n';
      index.entries.push_back(std::move(e));
    }
  }
  if (!meta) throw DataError("write failed for meta.csv");
  return index;
}

}  // namespace fpam
