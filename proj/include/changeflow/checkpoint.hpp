#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "changeflow/nn/tensor.hpp"

namespace changeflow {

/// Checkpoint container, version 1:
///
///   line 1   "changeflow-checkpoint"
///   line 2   one-line JSON header: {"version": 1, "meta": {...},
///            "tensors": [{"name": ..., "shape": [rows, cols]}, ...]}
///   rest     raw little-endian float32 data of every tensor, row-major, in
///            header order, with nothing in between
inline constexpr const char* kCheckpointMagic = "changeflow-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<float> values;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<TensorRecord> tensors;

  const TensorRecord& find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Appends every parameter as a record, optionally with a name prefix.
void export_params(const nn::ParamList<float>& params, std::vector<TensorRecord>& out,
                   const std::string& prefix = "");

/// Loads parameters by name; throws LoadError on missing names or shape mismatch.
void import_params(const nn::ParamList<float>& params, const Checkpoint& checkpoint,
                   const std::string& prefix = "");

}  // namespace changeflow
