#include "fpam/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <set>

namespace fpam {
namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

constexpr char kMagic[4] = {'F', 'P', 'A', 'M'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* raw = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), raw, raw + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what).data(), sizeof(T));
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t count, const char* what) {
    if (count > bytes_.size() - at_) throw DataError(std::string("checkpoint truncated while reading ") + what);
    auto out = bytes_.subspan(at_, count);
    at_ += count;
    return out;
  }

  bool done() const { return at_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t at_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamStore& store) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& e : store.entries()) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    const auto& shape = e.value.shape();
    put<std::uint8_t>(out, static_cast<std::uint8_t>(shape.rank()));
    for (auto extent : shape.extents()) put<std::uint32_t>(out, static_cast<std::uint32_t>(extent));
    for (Real v : e.value.values()) put<float>(out, static_cast<float>(v));
  }
  return out;
}

void decode_checkpoint(std::span<const std::uint8_t> bytes, ParamStore& store) {
  Reader in(bytes);
  const auto magic = in.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw DataError("checkpoint: bad magic");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>("parameter count");
  if (count != store.size()) {
    throw DataError("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                    std::to_string(store.size()));
  }
  // Decode fully before touching the store so a bad file leaves it unchanged.
  std::vector<std::pair<Tensor*, std::vector<Real>>> staged;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto length = in.get<std::uint16_t>("name length");
    const auto raw = in.take(length, "name");
    const std::string name(raw.begin(), raw.end());
    if (!store.contains(name)) throw DataError("checkpoint: unknown parameter '" + name + "'");
    if (!seen.insert(name).second) throw DataError("checkpoint: duplicated parameter '" + name + "'");
    Tensor& target = store.get(name);
    const auto rank = in.get<std::uint8_t>("rank");
    if (rank != target.shape().rank()) throw DataError("checkpoint: rank mismatch for '" + name + "'");
    for (std::size_t axis = 0; axis < rank; ++axis) {
      if (in.get<std::uint32_t>("extent") != target.dim(axis)) {
        throw DataError("checkpoint: extent mismatch for '" + name + "' on axis " + std::to_string(axis));
      }
    }
    std::vector<Real> values(target.numel());
    for (auto& v : values) v = static_cast<Real>(in.get<float>("values"));
    staged.emplace_back(&target, std::move(values));
  }
  if (!in.done()) throw DataError("checkpoint: trailing bytes after the last parameter");
  for (auto& [target, values] : staged) {
    auto dst = target->mutable_values();
    std::copy(values.begin(), values.end(), dst.begin());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store) {
  const auto bytes = encode_checkpoint(store);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
  const auto bytes = read_file_bytes(path);
  try {
    decode_checkpoint(bytes, store);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::filesystem::path info_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

void write_checkpoint_info(const std::filesystem::path& checkpoint, const CheckpointInfo& info) {
  const auto& b = info.model.backbone;
  nlohmann::ordered_json j;
  j["backbone"] = {{"name", b.name},
                   {"input_channels", b.input_channels},
                   {"stem_channels", b.stem_channels},
                   {"stage_channels", b.stage_channels},
                   {"blocks", b.blocks},
                   {"expansion", b.expansion}};
  j["head"] = head_name(info.model.head);
  j["num_classes"] = info.model.num_classes;
  j["aligned_channels"] = info.model.aligned_channels;
  j["input_mean"] = info.input_mean;
  j["input_std"] = info.input_std;
  const auto& f = info.frontend;
  j["frontend"] = {{"rate", f.sample_rate}, {"seconds", f.seconds}, {"mels", f.n_mels}, {"hop", f.hop},
                   {"win", f.win},          {"fft", f.n_fft},       {"fmin", f.fmin},    {"fmax", f.fmax},
                   {"log_floor", f.log_floor}};
  j["class_names"] = info.class_names;
  j["fold"] = info.fold;
  j["epoch"] = info.epoch;
  j["test_accuracy"] = info.test_accuracy;
  std::ofstream out(info_path(checkpoint));
  if (!out) throw DataError("cannot write " + info_path(checkpoint).string());
  out << j.dump(2) << '\n';
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& checkpoint) {
  const auto path = info_path(checkpoint);
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint metadata " + path.string());
  CheckpointInfo info;
  try {
    const auto j = nlohmann::json::parse(in);
    const auto& b = j.at("backbone");
    auto& cfg = info.model.backbone;
    cfg.name = b.at("name").get<std::string>();
    cfg.input_channels = b.at("input_channels").get<std::size_t>();
    cfg.stem_channels = b.at("stem_channels").get<std::size_t>();
    cfg.stage_channels = b.at("stage_channels").get<std::array<std::size_t, 4>>();
    cfg.blocks = b.at("blocks").get<std::array<std::size_t, 4>>();
    cfg.expansion = b.at("expansion").get<std::size_t>();
    info.model.head = parse_head(j.at("head").get<std::string>());
    info.model.num_classes = j.at("num_classes").get<std::size_t>();
    info.model.aligned_channels = j.at("aligned_channels").get<std::size_t>();
    info.input_mean = j.at("input_mean").get<double>();
    info.input_std = j.at("input_std").get<double>();
    const auto& f = j.at("frontend");
    info.frontend.sample_rate = f.at("rate").get<int>();
    info.frontend.seconds = f.at("seconds").get<double>();
    info.frontend.n_mels = f.at("mels").get<int>();
    info.frontend.hop = f.at("hop").get<int>();
    info.frontend.win = f.at("win").get<int>();
    info.frontend.n_fft = f.at("fft").get<int>();
    info.frontend.fmin = f.at("fmin").get<double>();
    info.frontend.fmax = f.at("fmax").get<double>();
    info.frontend.log_floor = f.at("log_floor").get<double>();
    info.class_names = j.at("class_names").get<std::vector<std::string>>();
    info.fold = j.at("fold").get<int>();
    info.epoch = j.at("epoch").get<std::size_t>();
    info.test_accuracy = j.at("test_accuracy").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return info;
}

}  // namespace fpam
