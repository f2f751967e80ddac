#include "misleader/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <zlib.h>
#include "json.hpp"

namespace misleader {

namespace {

using nlohmann::json;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  static_assert(sizeof(float) == 4);
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);  // little-endian host assumed, as everywhere in this codebase
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw TruncatedFile("checkpoint: unexpected end of file");
  }
  std::uint16_t u16() {
    need(2);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
    pos += 2;
    return std::uint16_t(p[0]) | (std::uint16_t(p[1]) << 8);
  }
  std::uint32_t u32() {
    need(4);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
    pos += 4;
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<unsigned char>(buf[pos++]);
  }
  float f32() {
    need(4);
    float v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

json spec_to_json(const ArchitectureSpec& spec, std::uint64_t rng_seed) {
  json j;
  j["kind"] = to_string(spec.kind);
  j["layer_sizes"] = spec.layer_sizes;
  j["activation"] = to_string(spec.activation);
  j["input_shape"] = spec.input_shape;
  j["output_dim"] = spec.output_dim;
  j["rng_seed"] = rng_seed;
  return j;
}

void spec_from_json(const json& j, ArchitectureSpec& spec, std::uint64_t& rng_seed) {
  spec.kind = arch_kind_from_string(j.at("kind").get<std::string>());
  spec.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
  spec.activation = activation_from_string(j.at("activation").get<std::string>());
  spec.input_shape = j.at("input_shape").get<std::vector<std::size_t>>();
  spec.output_dim = j.at("output_dim").get<std::size_t>();
  rng_seed = j.at("rng_seed").get<std::uint64_t>();
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::string out;
  out.reserve(64 + model.params.size() * 64);
  out += "MSLD";
  put_u16(out, kCheckpointVersion);

  const std::string desc = spec_to_json(model.spec, model.rng_seed).dump();
  put_u32(out, static_cast<std::uint32_t>(desc.size()));
  out += desc;

  put_u32(out, static_cast<std::uint32_t>(model.params.size()));
  for (const auto& [name, tensor] : model.params) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    out.push_back(char(tensor.shape.size()));
    for (std::size_t d : tensor.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : tensor.data) put_f32(out, static_cast<float>(v));
  }

  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size())));
  put_u32(out, crc);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InvalidArgument("checkpoint: cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidArgument("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < 4 || buf.compare(0, 4, "MSLD") != 0)
    throw BadMagic("checkpoint: bad magic in " + path);
  if (buf.size() < 10) throw TruncatedFile("checkpoint: file too small");

  const std::size_t body = buf.size() - 4;
  const auto stored_crc = [&] {
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + body);
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
  }();
  const auto actual_crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(body)));
  if (stored_crc != actual_crc)
    throw ChecksumMismatch("checkpoint: CRC mismatch in " + path);

  Reader r(buf);
  r.pos = 4;
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion)
    throw VersionMismatch("checkpoint: format version " + std::to_string(version) +
                          " unsupported");

  Model model;
  const std::uint32_t desc_len = r.u32();
  const std::string desc = r.bytes(desc_len);
  try {
    spec_from_json(json::parse(desc), model.spec, model.rng_seed);
  } catch (const json::exception& e) {
    throw SchemaError("checkpoint: bad descriptor: " + std::string(e.what()));
  }

  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    const std::string name = r.bytes(name_len);
    const std::uint8_t rank = r.u8();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.u32();
    Tensor t(shape);
    for (double& v : t.data) v = static_cast<double>(r.f32());
    model.params.emplace(name, std::move(t));
  }
  if (r.pos != body) throw SchemaError("checkpoint: trailing bytes before checksum");

  model.spec.validate();
  return model;
}

Model quantize_to_checkpoint_precision(Model model) {
  for (auto& [name, t] : model.params)
    for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
  return model;
}

void save_ensemble(const Ensemble& ensemble, const std::string& prefix) {
  ensemble.validate();
  json manifest;
  manifest["members"] = json::array();
  for (std::size_t i = 0; i < ensemble.members.size(); ++i) {
    const std::string file = prefix + "_member" + std::to_string(i) + ".ckpt";
    save_checkpoint(ensemble.members[i], file);
    json entry;
    entry["file"] = file.substr(file.find_last_of('/') + 1);
    entry["arch"] = ensemble.members[i].spec.id();
    manifest["members"].push_back(entry);
  }
  std::ofstream f(prefix + "_manifest.json", std::ios::trunc);
  if (!f) throw InvalidArgument("checkpoint: cannot write " + prefix + "_manifest.json");
  f << manifest.dump(2) << "\n";
}

Ensemble load_ensemble(const std::string& prefix) {
  std::ifstream f(prefix + "_manifest.json");
  if (!f) throw InvalidArgument("checkpoint: cannot open " + prefix + "_manifest.json");
  json manifest;
  try {
    f >> manifest;
  } catch (const json::exception& e) {
    throw SchemaError("checkpoint: bad manifest: " + std::string(e.what()));
  }
  const std::string dir =
      prefix.find('/') == std::string::npos ? "" : prefix.substr(0, prefix.find_last_of('/') + 1);
  Ensemble ens;
  for (const auto& entry : manifest.at("members"))
    ens.members.push_back(load_checkpoint(dir + entry.at("file").get<std::string>()));
  ens.validate();
  return ens;
}

}  // namespace misleader
