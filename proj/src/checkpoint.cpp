#include "svc/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace svc {

namespace {

constexpr char kMagic[8] = {'S', 'V', 'C', 'C', 'K', 'P', 'T', '1'};

struct ParsedCheckpoint {
  nlohmann::json manifest;
  std::string payload;
};

ParsedCheckpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw VersionError("not a checkpoint file: " + path);
  std::uint32_t mlen = 0;
  f.read(reinterpret_cast<char*>(&mlen), 4);
  if (!f) throw VersionError("truncated checkpoint manifest: " + path);
  std::string mtext(mlen, '\0');
  f.read(mtext.data(), mlen);
  if (!f) throw VersionError("truncated checkpoint manifest: " + path);
  ParsedCheckpoint pc;
  try {
    pc.manifest = nlohmann::json::parse(mtext);
  } catch (const nlohmann::json::exception& e) {
    throw VersionError(std::string("bad checkpoint manifest: ") + e.what());
  }
  pc.payload.assign((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return pc;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const ExperimentConfig& cfg,
                     const std::vector<std::string>& groups) {
  nlohmann::json manifest;
  manifest["format"] = "svc-ckpt-v1";
  nlohmann::json jgroups;
  for (const auto& g : groups) jgroups[g] = hex64(cfg.group_fingerprint(g));
  manifest["groups"] = jgroups;

  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  for (const auto& name : store.names()) {
    const std::string& g = store.group_of(name);
    bool wanted = false;
    for (const auto& want : groups) wanted = wanted || want == g;
    if (!wanted) continue;
    const ParamView& v = store.view(name);
    tensors.push_back({{"name", name}, {"group", g}, {"rows", v.rows}, {"cols", v.cols}});
    const size_t bytes = v.size() * sizeof(Real);
    const size_t off = payload.size();
    payload.resize(off + bytes);
    std::memcpy(payload.data() + off, store.data(v), bytes);
  }
  manifest["tensors"] = tensors;

  const std::string mtext = manifest.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(kMagic, 8);
  const std::uint32_t mlen = static_cast<std::uint32_t>(mtext.size());
  f.write(reinterpret_cast<const char*>(&mlen), 4);
  f.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

void load_checkpoint(const std::string& path, ParamStore& store,
                     const ExperimentConfig& cfg,
                     const std::vector<std::string>& groups) {
  ParsedCheckpoint pc = read_checkpoint(path);
  if (pc.manifest.value("format", "") != "svc-ckpt-v1")
    throw VersionError("unknown checkpoint format in " + path);
  const auto& jgroups = pc.manifest.at("groups");
  for (const auto& g : groups) {
    if (!jgroups.contains(g))
      throw VersionError("checkpoint " + path + " does not contain group '" + g + "'");
    const std::string want = hex64(cfg.group_fingerprint(g));
    const std::string got = jgroups.at(g).get<std::string>();
    if (want != got)
      throw VersionError("checkpoint group '" + g + "' was written under a different " +
                         "configuration (fingerprint " + got + ", active " + want + ")");
  }

  size_t off = 0;
  for (const auto& jt : pc.manifest.at("tensors")) {
    const std::string name = jt.at("name").get<std::string>();
    const std::string g = jt.at("group").get<std::string>();
    const int rows = jt.at("rows").get<int>();
    const int cols = jt.at("cols").get<int>();
    const size_t bytes = static_cast<size_t>(rows) * cols * sizeof(Real);
    bool wanted = false;
    for (const auto& want : groups) wanted = wanted || want == g;
    if (wanted) {
      if (!store.has(name))
        throw VersionError("checkpoint tensor '" + name + "' is not part of the active model");
      const ParamView& v = store.view(name);
      if (v.rows != rows || v.cols != cols)
        throw VersionError("checkpoint tensor '" + name + "' has shape " +
                           std::to_string(rows) + "x" + std::to_string(cols) +
                           ", active model expects " + std::to_string(v.rows) + "x" +
                           std::to_string(v.cols));
      if (off + bytes > pc.payload.size())
        throw VersionError("checkpoint payload truncated at tensor '" + name + "'");
      std::memcpy(store.data(v), pc.payload.data() + off, bytes);
    }
    off += bytes;
  }
  if (off != pc.payload.size())
    throw VersionError("checkpoint payload size does not match manifest");
}

std::vector<std::string> checkpoint_groups(const std::string& path) {
  ParsedCheckpoint pc = read_checkpoint(path);
  std::vector<std::string> out;
  for (auto it = pc.manifest.at("groups").begin(); it != pc.manifest.at("groups").end(); ++it)
    out.push_back(it.key());
  return out;
}

bool checkpoint_compatible(const std::string& path, const ExperimentConfig& cfg,
                           const std::vector<std::string>& groups) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) return false;
  probe.close();
  try {
    ParsedCheckpoint pc = read_checkpoint(path);
    const auto& jgroups = pc.manifest.at("groups");
    for (const auto& g : groups) {
      if (!jgroups.contains(g)) return false;
      if (jgroups.at(g).get<std::string>() != hex64(cfg.group_fingerprint(g)))
        return false;
    }
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace svc
