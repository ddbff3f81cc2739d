#include "fpam/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fpam/errors.hpp"
#include "fpam/ops.hpp"

namespace fpam {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char c : s) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  return quoted + "\"";
}

constexpr const char* kCurvesHeader = "epoch,lr,train_loss,train_accuracy,test_loss,test_accuracy\n";

void write_curve_row(std::ostream& out, const EpochStats& s) {
  out << s.epoch << "," << fmt(s.lr) << "," << fmt(s.train_loss) << "," << fmt(s.train_accuracy) << ","
      << fmt(s.test_loss) << "," << fmt(s.test_accuracy) << "\n";
}

}  // namespace

void export_metrics(const TrainReport& report, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  for (const auto& fold : report.folds) {
    auto curves = open_out(out_dir / ("fold" + std::to_string(fold.fold)) / "curves.csv");
    curves << kCurvesHeader;
    for (const auto& s : fold.epochs) write_curve_row(curves, s);

    auto conf = open_out(out_dir / ("confusion_fold" + std::to_string(fold.fold) + ".csv"));
    const std::size_t k = fold.confusion.classes();
    conf << "truth\\predicted";
    for (std::size_t c = 0; c < k; ++c) {
      conf << "," << csv_field(c < report.class_names.size() ? report.class_names[c] : std::to_string(c));
    }
    conf << "\n";
    for (std::size_t t = 0; t < k; ++t) {
      conf << csv_field(t < report.class_names.size() ? report.class_names[t] : std::to_string(t));
      for (std::size_t p = 0; p < k; ++p) conf << "," << fold.confusion.at(t, p);
      conf << "\n";
    }
  }

  if (!report.folds.empty()) {
    auto curves = open_out(out_dir / "curves.csv");
    curves << kCurvesHeader;
    const std::size_t epochs = report.folds.front().epochs.size();
    const double n = static_cast<double>(report.folds.size());
    for (std::size_t e = 0; e < epochs; ++e) {
      EpochStats mean;
      mean.epoch = e + 1;
      mean.lr = report.folds.front().epochs[e].lr;
      for (const auto& fold : report.folds) {
        const EpochStats& s = fold.epochs.at(e);
        mean.train_loss += s.train_loss / n;
        mean.train_accuracy += s.train_accuracy / n;
        mean.test_loss += s.test_loss / n;
        mean.test_accuracy += s.test_accuracy / n;
      }
      write_curve_row(curves, mean);
    }
  }

  auto summary = open_out(out_dir / "summary.csv");
  summary << "fold,final_accuracy,best_epoch,best_accuracy\n";
  for (const auto& fold : report.folds) {
    summary << fold.fold << "," << fmt(fold.final_accuracy) << "," << fold.best_epoch << ","
            << fmt(fold.best_accuracy) << "\n";
  }
  summary << "mean," << fmt(report.mean_accuracy) << ",,\n";
}

void write_ablation_table(const AblationReport& report, const fs::path& out_dir) {
  auto csv = open_out(out_dir / "ablation.csv");
  csv << "head,mixup,seed,accuracy\n";
  for (const auto& arm : report.arms) {
    const std::string mix = arm.mixup ? fmt(*arm.mixup) : "off";
    for (std::size_t i = 0; i < arm.seeds.size(); ++i) {
      csv << head_name(arm.head) << "," << mix << "," << arm.seeds[i] << "," << fmt(arm.accuracies.at(i)) << "\n";
    }
  }

  auto md = open_out(out_dir / "ablation.md");
  md << "| Head | Mixup | Mean accuracy (%) | Per seed (%) |\n";
  md << "|---|---|---|---|\n";
  for (const auto& arm : report.arms) {
    md << "| " << (arm.head == HeadKind::kFpam ? "ResNet50 + FPAM" : "ResNet50") << " | "
       << (arm.mixup ? "yes (alpha " + fmt(*arm.mixup).substr(0, 4) + ")" : std::string("no")) << " | ";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * arm.mean_accuracy);
    md << buf << " |";
    for (std::size_t i = 0; i < arm.accuracies.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.2f", 100.0 * arm.accuracies[i]);
      md << (i ? ", " : " ") << buf;
    }
    md << " |\n";
  }
}

void write_pgm(const fs::path& path, const Greymap& image) {
  if (image.pixels.size() != image.width * image.height) throw ContractError("write_pgm: pixel count mismatch");
  auto out = open_out(path);
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

Greymap read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string magic;
  Greymap image;
  int maxval = 0;
  in >> magic >> image.width >> image.height >> maxval;
  if (!in || magic != "P5" || maxval != 255) throw DataError(path.string() + ": not an 8-bit P5 greymap");
  in.get();
  image.pixels.resize(image.width * image.height);
  in.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(image.pixels.size())) throw DataError(path.string() + ": truncated");
  return image;
}

namespace {

std::uint8_t to_grey(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_map_csv(const fs::path& path, const AttentionMap& map) {
  auto out = open_out(path);
  out << "frame";
  for (std::size_t m = 0; m < map.mels; ++m) out << ",mel" << m;
  out << "\n";
  char buf[32];
  for (std::size_t t = 0; t < map.frames; ++t) {
    out << t;
    for (std::size_t m = 0; m < map.mels; ++m) {
      std::snprintf(buf, sizeof buf, ",%.6f", map.at(t, m));
      out << buf;
    }
    out << "\n";
  }
}

}  // namespace

AttentionExport export_attention(const Model& model, const FeatureMap& features, const Normalization& norm,
                                 const std::string& clip_id, const fs::path& out_dir) {
  if (model.config().head != HeadKind::kFpam) {
    throw ContractError("attention export needs a model with the attention head");
  }
  NoGradGuard no_grad;
  const ModelOutput out = model.run(make_input(features, norm));
  const AttentionBundle& bundle = *out.attention;

  AttentionExport result;
  result.dir = out_dir / "attn" / clip_id;
  fs::create_directories(result.dir);
  const std::size_t frames = features.frames;
  const std::size_t mels = features.mels;

  for (std::size_t s = 0; s < kNumScales; ++s) {
    const Tensor& f_s = bundle.f_s[s];
    AttentionMap& map = result.maps[s];
    map.scale = kScaleNames[s];
    map.height = f_s.dim(2);
    map.width = f_s.dim(3);
    const auto v = f_s.values();
    map.native.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(map.height * map.width));
    map.frames = frames;
    map.mels = mels;
    map.upsampled.resize(frames * mels);
    Greymap image{mels, frames, std::vector<std::uint8_t>(frames * mels)};
    for (std::size_t t = 0; t < frames; ++t) {
      const std::size_t src_t = t * map.height / frames;
      for (std::size_t m = 0; m < mels; ++m) {
        const std::size_t src_m = m * map.width / mels;
        const double value = map.native[src_t * map.width + src_m];
        map.upsampled[t * mels + m] = value;
        image.pixels[t * mels + m] = to_grey(value);
      }
    }
    write_pgm(result.dir / (map.scale + ".pgm"), image);
    write_map_csv(result.dir / (map.scale + ".csv"), map);
  }

  const auto [lo, hi] = std::minmax_element(features.data.begin(), features.data.end());
  const double span = static_cast<double>(*hi) - static_cast<double>(*lo);
  Greymap spec{mels, frames, std::vector<std::uint8_t>(frames * mels)};
  for (std::size_t k = 0; k < spec.pixels.size(); ++k) {
    spec.pixels[k] = to_grey(span > 0 ? (features.data[k] - *lo) / span : 0.0);
  }
  write_pgm(result.dir / "spectrogram.pgm", spec);

  const auto gate = bundle.f_ca.values();
  result.channel_gate.assign(gate.begin(), gate.end());
  {
    auto csv = open_out(result.dir / "channel_gate.csv");
    csv << "channel,gate\n";
    for (std::size_t c = 0; c < result.channel_gate.size(); ++c) {
      csv << c << "," << fmt(result.channel_gate[c]) << "\n";
    }
  }

  const auto logits = out.logits.values();
  const double peak = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (Real l : logits) z += std::exp(l - peak);
  for (Real l : logits) result.probabilities.push_back(std::exp(l - peak) / z);
  result.predicted = argmax(logits);
  return result;
}

}  // namespace fpam
