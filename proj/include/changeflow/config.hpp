#pragma once

#include <filesystem>

#include <json.hpp>

#include "changeflow/latent_codec.hpp"
#include "changeflow/synth_data.hpp"
#include "changeflow/training.hpp"

namespace changeflow {

/// Settings for every pipeline stage. On disk this is a JSON object with the
/// optional sections "flow", "generator" and "codec"; keys inside each
/// section carry the field names of FlowConfig, GeneratorConfig and
/// CodecTrainConfig. Unknown sections or keys are rejected.
struct RunConfig {
  FlowConfig flow;
  GeneratorConfig generator;
  CodecTrainConfig codec;
};

nlohmann::json to_json(const CodecTrainConfig& config);
CodecTrainConfig codec_config_from_json(const nlohmann::json& j, CodecTrainConfig base = {});

nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});

/// Throws InvalidArgument for unreadable files, malformed JSON or unknown keys.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace changeflow
