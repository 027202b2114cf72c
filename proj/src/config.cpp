#include "changeflow/config.hpp"

#include <fstream>

namespace changeflow {

nlohmann::json to_json(const CodecTrainConfig& c) {
  return {{"kind", c.kind},
          {"latent_channels", c.codec.latent_channels},
          {"width", c.codec.width},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"noise_sigma", c.noise_sigma},
          {"latent_penalty", c.latent_penalty},
          {"seed", c.seed},
          {"min_masks", c.min_masks}};
}

CodecTrainConfig codec_config_from_json(const nlohmann::json& j, CodecTrainConfig c) {
  if (!j.is_object()) throw InvalidArgument("codec config must be an object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "kind") c.kind = value.get<std::string>();
      else if (key == "latent_channels") c.codec.latent_channels = value.get<int>();
      else if (key == "width") c.codec.width = value.get<int>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "noise_sigma") c.noise_sigma = value.get<double>();
      else if (key == "latent_penalty") c.latent_penalty = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "min_masks") c.min_masks = value.get<int>();
      else throw InvalidArgument("unknown codec key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument("codec key '" + key + "': " + e.what());
    }
  }
  if (c.kind != "conv" && c.kind != "identity") throw InvalidArgument("codec kind must be 'conv' or 'identity'");
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"flow", to_json(c.flow)}, {"generator", to_json(c.generator)}, {"codec", to_json(c.codec)}};
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c) {
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "flow") c.flow = flow_config_from_json(value, c.flow);
    else if (key == "generator") c.generator = generator_config_from_json(value, c.generator);
    else if (key == "codec") c.codec = codec_config_from_json(value, c.codec);
    else throw InvalidArgument("unknown config section '" + key + "'");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("malformed config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace changeflow
