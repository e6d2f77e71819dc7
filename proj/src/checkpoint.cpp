#include "minibert/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "minibert/config.hpp"
#include "minibert/errors.hpp"

namespace minibert {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'M', 'B', 'F', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(std::string_view bytes, std::size_t offset, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

void put_floats(std::string& out, std::span<const float> values) {
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

struct DataWriter {
  json directory = json::array();
  std::string data;

  void add(const std::string& name, const ag::Shape& shape, std::span<const float> values) {
    directory.push_back({{"name", name}, {"shape", shape}, {"offset", data.size()}});
    put_floats(data, values);
  }
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  DataWriter w;
  for (const auto& p : ckpt.params.named_parameters()) w.add(p.name, p.tensor.shape(), p.tensor.data());
  json header{{"config", to_json(ckpt.params.config)},
              {"vocabulary", ckpt.vocab.tokens()},
              {"provenance",
               {{"seed", ckpt.provenance.seed},
                {"config_hash", ckpt.provenance.config_hash},
                {"parent_hash", ckpt.provenance.parent_hash},
                {"kind", ckpt.provenance.kind}}}};
  if (ckpt.optimizer) {
    const auto& s = *ckpt.optimizer;
    json steps = json::object();
    for (const auto& [name, m] : s.moments) {
      steps[name] = m.steps;
      const ag::Shape shape{m.first.size()};
      w.add("optimizer.first." + name, shape, m.first);
      w.add("optimizer.second." + name, shape, m.second);
    }
    header["optimizer"] = {
        {"step", s.step}, {"beta1", s.beta1}, {"beta2", s.beta2}, {"epsilon", s.epsilon}, {"steps", steps}};
  }
  header["tensors"] = w.directory;
  header["data_bytes"] = w.data.size();
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out += text;
  out += w.data;
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes, const std::string& source) {
  auto corrupt = [&](const std::string& what) { return CorruptCheckpointError(source + ": " + what); };
  if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(kMagic, 4)) throw corrupt("bad magic (expected MBF1)");
  if (bytes.size() < 16) throw corrupt("truncated preamble");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != kCheckpointVersion) {
    throw UnsupportedVersionError(source + ": unsupported format version " + std::to_string(version) + " (expected " +
                                  std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t header_len = get_le(bytes, 8, 8);
  if (header_len > bytes.size() - 16) throw corrupt("truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(16, header_len));
  } catch (const json::exception& e) {
    throw corrupt(std::string("header is not valid JSON: ") + e.what());
  }
  const std::string_view data = bytes.substr(16 + header_len);

  Checkpoint ckpt;
  try {
    const ModelConfig config = model_config_from_json(header.at("config"));
    config.validate();
    ckpt.params = init_params(config, 0);
    ckpt.vocab = Vocabulary(header.at("vocabulary").get<std::vector<std::string>>());
    const auto& prov = header.at("provenance");
    ckpt.provenance = {prov.at("seed").get<std::uint64_t>(), prov.at("config_hash").get<std::string>(),
                       prov.at("parent_hash").get<std::string>(), prov.at("kind").get<std::string>()};
    const auto expected_bytes = header.at("data_bytes").get<std::uint64_t>();
    if (data.size() < expected_bytes) {
      throw corrupt("truncated tensor data: " + std::to_string(data.size()) + " of " + std::to_string(expected_bytes) +
                    " bytes");
    }
    if (data.size() > expected_bytes) throw corrupt("unexpected trailing bytes after tensor data");

    std::map<std::string, std::pair<ag::Shape, std::uint64_t>> directory;
    for (const auto& entry : header.at("tensors")) {
      directory[entry.at("name").get<std::string>()] = {entry.at("shape").get<ag::Shape>(),
                                                        entry.at("offset").get<std::uint64_t>()};
    }
    auto read_into = [&](const std::string& name, const ag::Shape& shape, std::span<float> dst) {
      auto it = directory.find(name);
      if (it == directory.end()) throw corrupt("tensor '" + name + "' missing from directory");
      if (it->second.first != shape) {
        throw corrupt("tensor '" + name + "' has shape " + ag::shape_str(it->second.first) + ", expected " +
                      ag::shape_str(shape));
      }
      const std::uint64_t offset = it->second.second;
      const std::uint64_t need = 4ULL * dst.size();
      if (offset > data.size() || need > data.size() - offset) {
        throw corrupt("tensor '" + name + "' byte count exceeds the data block");
      }
      for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(data, offset + 4 * i, 4)));
      directory.erase(it);
    };
    for (auto& p : ckpt.params.named_parameters()) read_into(p.name, p.tensor.shape(), p.tensor.mutable_data());
    if (header.contains("optimizer")) {
      const auto& o = header["optimizer"];
      OptimizerState s;
      s.step = o.at("step").get<long>();
      s.beta1 = o.at("beta1").get<double>();
      s.beta2 = o.at("beta2").get<double>();
      s.epsilon = o.at("epsilon").get<double>();
      for (const auto& [name, steps] : o.at("steps").items()) {
        auto& m = s.moments[name];
        m.steps = steps.get<long>();
        const auto it = directory.find("optimizer.first." + name);
        if (it == directory.end()) throw corrupt("optimizer moments for '" + name + "' missing");
        const ag::Shape shape = it->second.first;
        m.first.resize(ag::numel_of(shape));
        m.second.resize(ag::numel_of(shape));
        read_into("optimizer.first." + name, shape, m.first);
        read_into("optimizer.second." + name, shape, m.second);
      }
      ckpt.optimizer = std::move(s);
    }
    if (!directory.empty()) throw corrupt("unknown tensor '" + directory.begin()->first + "' in directory");
  } catch (const json::exception& e) {
    throw corrupt(std::string("malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw corrupt(std::string("malformed config: ") + e.what());
  } catch (const ParameterError& e) {
    throw corrupt(std::string("invalid config: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing checkpoint " + path.string());
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path), path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  auto ckpt = load_checkpoint(path);
  if (!(ckpt.params.config == expected)) {
    throw InputError(path.string() + ": checkpoint config " + to_json(ckpt.params.config).dump() +
                     " does not match the requested config " + to_json(expected).dump());
  }
  return ckpt;
}

std::string checkpoint_hash(const std::filesystem::path& path) { return fnv1a_hex(read_file(path)); }

}  // namespace minibert
