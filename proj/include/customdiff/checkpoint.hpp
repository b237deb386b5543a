// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "customdiff/analysis.hpp"
#include "customdiff/pipeline.hpp"

namespace cdiff {

// Container layout: u64 little-endian manifest length, UTF-8 JSON manifest,
// then raw little-endian f64 tensors at the offsets the manifest declares.

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

struct Container {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Tensor> tensors;

  const Tensor& at(std::string_view name) const;
  const Tensor* find(std::string_view name) const;
};

std::string container_to_bytes(const Container& c);
/// CorruptCheckpoint on any malformed manifest, offset, or length.
Container container_from_bytes(std::string_view bytes);

void write_file(const std::string& path, std::string_view bytes);
std::string read_file(const std::string& path);

enum class CheckpointKind { Base, Delta, Merged };
const char* kind_name(CheckpointKind kind);
CheckpointKind checkpoint_kind(const Container& c);

/// Denoiser, vocabulary (with embedding table), schedule and modifiers.
/// `extra` is merged into meta.
Container pipeline_to_container(const Pipeline& model, CheckpointKind kind,
                                const nlohmann::json& extra = nlohmann::json::object());
/// Accepts base and merged checkpoints; a delta is rejected.
Pipeline pipeline_from_container(const Container& c);

Container delta_to_container(const DeltaCheckpoint& delta, const ModelDims& dims);
DeltaCheckpoint delta_from_container(const Container& c);

void save_pipeline(const std::string& path, const Pipeline& model, CheckpointKind kind,
                   const nlohmann::json& extra = nlohmann::json::object());
Pipeline load_pipeline(const std::string& path);
void save_delta(const std::string& path, const DeltaCheckpoint& delta, const ModelDims& dims);
DeltaCheckpoint load_delta(const std::string& path);

nlohmann::json dims_to_json(const ModelDims& dims);
ModelDims dims_from_json(const nlohmann::json& j);

}  // namespace cdiff
