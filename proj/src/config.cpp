#include "fpam/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "fpam/dataset.hpp"
#include "fpam/errors.hpp"

namespace fpam {
namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& text, const std::string& where) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (!in || !(in >> std::ws).eof()) throw ConfigError(where + ": cannot parse '" + text + "'");
  return value;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[32];
  const auto result = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, result.ptr);
}

}  // namespace

IniFile IniFile::parse(std::istream& in) {
  IniFile ini;
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      ini.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    ini.sections_[section][key] = trim(line.substr(eq + 1));
  }
  return ini;
}

IniFile IniFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in);
}

std::optional<std::string> IniFile::get(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return std::nullopt;
  auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

void IniFile::set(const std::string& section, const std::string& key, std::string value) {
  sections_[section][key] = std::move(value);
}

std::optional<double> parse_mixup(const std::string& text) {
  if (text == "off" || text == "none") return std::nullopt;
  const double alpha = parse_number<double>(text, "mixup");
  if (!(alpha > 0)) throw ConfigError("mixup: alpha must be positive or 'off'");
  return alpha;
}

std::optional<double> parse_grad_clip(const std::string& text) {
  if (text == "off" || text == "none") return std::nullopt;
  const double bound = parse_number<double>(text, "grad_clip");
  if (!(bound > 0)) throw ConfigError("grad_clip: bound must be positive or 'off'");
  return bound;
}

std::vector<int> parse_folds(const std::string& text) {
  if (text == "all") return {};
  std::vector<int> folds;
  for (const auto& item : split_list(text)) {
    const int fold = parse_number<int>(item, "folds");
    if (fold < 1 || fold > kNumFolds) throw ConfigError("folds: fold " + item + " outside 1..5");
    if (std::find(folds.begin(), folds.end(), fold) == folds.end()) folds.push_back(fold);
  }
  if (folds.empty()) throw ConfigError("folds: empty list");
  std::sort(folds.begin(), folds.end());
  return folds;
}

std::vector<int> TrainConfig::resolved_folds() const {
  if (!folds.empty()) return folds;
  std::vector<int> all;
  for (int k = 1; k <= kNumFolds; ++k) all.push_back(k);
  return all;
}

void TrainConfig::validate() const {
  if (name.empty()) throw ConfigError("[run] name must not be empty");
  if (precision != 32 && precision != 64) throw ConfigError("[run] precision must be 32 or 64");
  if (preset != "tiny" && preset != "paper50") throw ConfigError("[model] preset must be 'tiny' or 'paper50'");
  if (head != "fpam" && head != "baseline") throw ConfigError("[model] head must be 'fpam' or 'baseline'");
  if (epochs == 0) throw ConfigError("[train] epochs must be positive");
  if (batch_size == 0) throw ConfigError("[train] batch_size must be positive");
  if (!(lr0 > 0)) throw ConfigError("[train] lr0 must be positive");
  if (!(lr_decay > 0)) throw ConfigError("[train] lr_decay must be positive");
  if (lr_step == 0) throw ConfigError("[train] lr_step must be positive");
  if (momentum < 0) throw ConfigError("[train] momentum must be non-negative");
  if (mixup_alpha && !(*mixup_alpha > 0)) throw ConfigError("[train] mixup alpha must be positive");
  if (grad_clip && !(*grad_clip > 0)) throw ConfigError("[train] grad_clip must be positive");
  if (meta.empty() && synthetic_classes.empty()) {
    throw ConfigError("[data] set either meta or synthetic_classes");
  }
  if (synthetic_clips == 0) throw ConfigError("[data] synthetic_clips must be positive");
  frontend.validate();
}

TrainConfig apply_config(TrainConfig c, const IniFile& ini) {
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, std::map<std::string, Setter>> table{
      {"run",
       {
           {"name", [&](auto& v, auto&) { c.name = v; }},
           {"out_dir", [&](auto& v, auto&) { c.out_dir = v; }},
           {"seed", [&](auto& v, auto& w) { c.seed = parse_number<std::uint64_t>(v, w); }},
           {"precision", [&](auto& v, auto& w) { c.precision = parse_number<int>(v, w); }},
       }},
      {"model",
       {
           {"preset", [&](auto& v, auto&) { c.preset = v; }},
           {"head", [&](auto& v, auto&) { c.head = v; }},
           {"aligned_channels", [&](auto& v, auto& w) { c.aligned_channels = parse_number<std::size_t>(v, w); }},
       }},
      {"train",
       {
           {"epochs", [&](auto& v, auto& w) { c.epochs = parse_number<std::size_t>(v, w); }},
           {"batch_size", [&](auto& v, auto& w) { c.batch_size = parse_number<std::size_t>(v, w); }},
           {"lr0", [&](auto& v, auto& w) { c.lr0 = parse_number<double>(v, w); }},
           {"lr_decay", [&](auto& v, auto& w) { c.lr_decay = parse_number<double>(v, w); }},
           {"lr_step", [&](auto& v, auto& w) { c.lr_step = parse_number<std::size_t>(v, w); }},
           {"momentum", [&](auto& v, auto& w) { c.momentum = parse_number<double>(v, w); }},
           {"mixup", [&](auto& v, auto&) { c.mixup_alpha = parse_mixup(v); }},
           {"grad_clip", [&](auto& v, auto&) { c.grad_clip = parse_grad_clip(v); }},
           {"folds", [&](auto& v, auto&) { c.folds = parse_folds(v); }},
       }},
      {"data",
       {
           {"meta", [&](auto& v, auto&) { c.meta = v; }},
           {"audio_dir", [&](auto& v, auto&) { c.audio_dir = v; }},
           {"cache_dir", [&](auto& v, auto&) { c.cache_dir = v; }},
           {"synthetic_classes",
            [&](auto& v, auto& w) {
              const auto items = split_list(v);
              if (items.size() == 1 && std::all_of(items[0].begin(), items[0].end(), ::isdigit)) {
                c.synthetic_classes = default_synth_classes(parse_number<std::size_t>(items[0], w));
              } else {
                c.synthetic_classes = items;
              }
            }},
           {"synthetic_clips", [&](auto& v, auto& w) { c.synthetic_clips = parse_number<std::size_t>(v, w); }},
           {"synthetic_seed", [&](auto& v, auto& w) { c.synthetic_seed = parse_number<std::uint64_t>(v, w); }},
           {"synthetic_dir", [&](auto& v, auto&) { c.synthetic_dir = v; }},
       }},
      {"frontend",
       {
           {"rate", [&](auto& v, auto& w) { c.frontend.sample_rate = parse_number<int>(v, w); }},
           {"seconds", [&](auto& v, auto& w) { c.frontend.seconds = parse_number<double>(v, w); }},
           {"mels", [&](auto& v, auto& w) { c.frontend.n_mels = parse_number<int>(v, w); }},
           {"hop", [&](auto& v, auto& w) { c.frontend.hop = parse_number<int>(v, w); }},
           {"win", [&](auto& v, auto& w) { c.frontend.win = parse_number<int>(v, w); }},
           {"fft", [&](auto& v, auto& w) { c.frontend.n_fft = parse_number<int>(v, w); }},
           {"fmin", [&](auto& v, auto& w) { c.frontend.fmin = parse_number<double>(v, w); }},
           {"fmax", [&](auto& v, auto& w) { c.frontend.fmax = parse_number<double>(v, w); }},
       }},
  };
  for (const auto& [section, keys] : ini.sections()) {
    auto s = table.find(section);
    if (s == table.end()) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [key, value] : keys) {
      auto k = s->second.find(key);
      if (k == s->second.end()) throw ConfigError("unknown config key '" + key + "' in section [" + section + "]");
      k->second(value, "[" + section + "] " + key);
    }
  }
  return c;
}

std::string to_ini(const TrainConfig& c) {
  std::ostringstream out;
  std::vector<std::string> folds;
  for (int f : c.resolved_folds()) folds.push_back(std::to_string(f));
  out << "[run]\n"
      << "name = " << c.name << "\n"
      << "out_dir = " << c.out_dir.string() << "\n"
      << "seed = " << c.seed << "\n"
      << "precision = " << c.precision << "\n"
      << "\n[model]\n"
      << "preset = " << c.preset << "\n"
      << "head = " << c.head << "\n"
      << "aligned_channels = " << c.aligned_channels << "\n"
      << "\n[train]\n"
      << "epochs = " << c.epochs << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "lr0 = " << format_double(c.lr0) << "\n"
      << "lr_decay = " << format_double(c.lr_decay) << "\n"
      << "lr_step = " << c.lr_step << "\n"
      << "momentum = " << format_double(c.momentum) << "\n"
      << "mixup = " << (c.mixup_alpha ? format_double(*c.mixup_alpha) : "off") << "\n"
      << "grad_clip = " << (c.grad_clip ? format_double(*c.grad_clip) : "off") << "\n"
      << "folds = " << join(folds) << "\n"
      << "\n[data]\n";
  if (!c.meta.empty()) out << "meta = " << c.meta.string() << "\n";
  if (!c.audio_dir.empty()) out << "audio_dir = " << c.audio_dir.string() << "\n";
  if (!c.cache_dir.empty()) out << "cache_dir = " << c.cache_dir.string() << "\n";
  if (!c.synthetic_classes.empty()) {
    out << "synthetic_classes = " << join(c.synthetic_classes) << "\n"
        << "synthetic_clips = " << c.synthetic_clips << "\n"
        << "synthetic_seed = " << c.synthetic_seed << "\n";
    if (!c.synthetic_dir.empty()) out << "synthetic_dir = " << c.synthetic_dir.string() << "\n";
  }
  out << "\n[frontend]\n"
      << "rate = " << c.frontend.sample_rate << "\n"
      << "seconds = " << format_double(c.frontend.seconds) << "\n"
      << "mels = " << c.frontend.n_mels << "\n"
      << "hop = " << c.frontend.hop << "\n"
      << "win = " << c.frontend.win << "\n"
      << "fft = " << c.frontend.n_fft << "\n"
      << "fmin = " << format_double(c.frontend.fmin) << "\n"
      << "fmax = " << format_double(c.frontend.resolved_fmax()) << "\n";
  return out.str();
}

}  // namespace fpam
