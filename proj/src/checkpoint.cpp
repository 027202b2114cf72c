#include "changeflow/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "changeflow/errors.hpp"

namespace changeflow {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const TensorRecord& Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw LoadError("checkpoint: tensor '" + name + "' not found");
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["meta"] = checkpoint.meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : checkpoint.tensors) {
    if (t.values.size() != static_cast<std::size_t>(t.rows) * t.cols) {
      throw InvalidShape("checkpoint: tensor '" + t.name + "' has inconsistent size");
    }
    header["tensors"].push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}});
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << kCheckpointMagic << '\n' << header.dump() << '\n';
  for (const auto& t : checkpoint.tensors) {
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  }
  if (!out) throw Error("failed while writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  std::string magic;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) throw LoadError(path.string() + ": not a checkpoint file");
  std::string line;
  std::getline(in, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": malformed header: " + e.what());
  }
  if (header.value("version", 0) != kCheckpointVersion) {
    throw LoadError(path.string() + ": unsupported checkpoint version");
  }
  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    TensorRecord t;
    t.name = entry.at("name").get<std::string>();
    t.rows = entry.at("shape").at(0).get<int>();
    t.cols = entry.at("shape").at(1).get<int>();
    t.values.resize(static_cast<std::size_t>(t.rows) * t.cols);
    in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    if (!in) throw LoadError(path.string() + ": truncated tensor data for '" + t.name + "'");
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void export_params(const nn::ParamList<float>& params, std::vector<TensorRecord>& out, const std::string& prefix) {
  for (const auto* p : params) {
    TensorRecord t;
    t.name = prefix + p->name;
    t.rows = static_cast<int>(p->value.rows());
    t.cols = static_cast<int>(p->value.cols());
    t.values.assign(p->value.data(), p->value.data() + p->value.size());
    out.push_back(std::move(t));
  }
}

void import_params(const nn::ParamList<float>& params, const Checkpoint& checkpoint, const std::string& prefix) {
  for (auto* p : params) {
    const auto& t = checkpoint.find(prefix + p->name);
    if (t.rows != p->value.rows() || t.cols != p->value.cols()) {
      throw LoadError("checkpoint: shape mismatch for '" + t.name + "'");
    }
    std::memcpy(p->value.data(), t.values.data(), t.values.size() * sizeof(float));
  }
}

}  // namespace changeflow
