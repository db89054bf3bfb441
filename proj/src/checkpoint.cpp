#include "riskunc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "riskunc/error.hpp"

namespace riskunc {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'R', 'U', 'Q', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint layout assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError("checkpoint is truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

void put_doubles(std::string& out, std::span<const double> values) {
  out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
}

}  // namespace

std::string serialize_checkpoint(const SequenceModel& model) {
  const auto params = model.named_parameters();
  const auto& opt = model.optimizer();
  const bool has_moments = !opt.first_moment.empty();

  json manifest;
  manifest["config"] = json::parse(model.config().to_json());
  manifest["vocab_size"] = model.vocab_size();
  manifest["ethnicities"] = model.ethnicities();
  manifest["optimizer_step"] = opt.step;
  manifest["has_moments"] = has_moments;
  std::ostringstream rng_state;
  rng_state << model.rng();
  manifest["rng_state"] = rng_state.str();
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : params) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  manifest["tensors"] = tensors;
  manifest["payload_doubles"] = has_moments ? 3 * offset : offset;

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string text = manifest.dump();
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& [name, t] : params) put_doubles(out, t.data());
  if (has_moments) {
    for (const auto& m : opt.first_moment) put_doubles(out, m);
    for (const auto& v : opt.second_moment) put_doubles(out, v);
  }
  put<std::uint64_t>(out, fnv1a(out.data(), out.size()));
  return out;
}

SequenceModel deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < pos + sizeof(std::uint64_t)) throw CheckpointError("checkpoint is truncated");
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::size_t tail = body;
  const auto stored = get<std::uint64_t>(bytes, tail);
  if (stored != fnv1a(bytes.data(), body)) throw CheckpointError("checkpoint checksum mismatch (file is corrupt)");

  const auto length = get<std::uint64_t>(bytes, pos);
  if (pos + length > body) throw CheckpointError("checkpoint manifest is truncated");
  try {
    const json manifest = json::parse(bytes.substr(pos, length));
    pos += length;
    SequenceModel model(ModelConfig::from_json(manifest.at("config").dump()),
                        manifest.at("vocab_size").get<std::size_t>(),
                        manifest.at("ethnicities").get<std::vector<std::string>>());
    const auto params = model.named_parameters();
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != params.size()) throw CheckpointError("checkpoint tensor table does not match the model");
    const std::size_t total = manifest.at("payload_doubles").get<std::size_t>();
    if (pos + total * sizeof(double) != body) throw CheckpointError("checkpoint payload has the wrong size");
    const auto* payload = reinterpret_cast<const char*>(bytes.data() + pos);
    auto read_into = [&](std::span<double> dst, std::size_t at) {
      std::memcpy(dst.data(), payload + at * sizeof(double), dst.size() * sizeof(double));
    };
    std::size_t count = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& entry = tensors[i];
      Tensor t = params[i].second;
      if (entry.at("name").get<std::string>() != params[i].first || entry.at("shape").get<Shape>() != t.shape()) {
        throw CheckpointError("checkpoint tensor '" + entry.at("name").get<std::string>() +
                              "' does not match the model");
      }
      read_into(t.mutable_data(), entry.at("offset").get<std::size_t>());
      count += t.size();
    }
    auto& opt = model.optimizer();
    opt.step = manifest.at("optimizer_step").get<std::int64_t>();
    if (manifest.at("has_moments").get<bool>()) {
      std::size_t at = count;
      for (auto* moments : {&opt.first_moment, &opt.second_moment}) {
        for (const auto& [name, t] : params) {
          moments->emplace_back(t.size());
          read_into(moments->back(), at);
          at += t.size();
        }
      }
    }
    std::istringstream rng_state(manifest.at("rng_state").get<std::string>());
    rng_state >> model.rng();
    if (!rng_state) throw CheckpointError("checkpoint rng state is malformed");
    return model;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint manifest is malformed: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  }
}

void save_checkpoint(const SequenceModel& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

SequenceModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace riskunc
