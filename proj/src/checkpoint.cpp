// SPDX-License-Identifier: Apache-2.0
#include "customdiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "customdiff/error.hpp"

namespace cdiff {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr const char* kFormat = "CDCK";
constexpr int kVersion = 1;

[[noreturn]] void corrupt(const std::string& msg) { fail(ErrorCode::CorruptCheckpoint, "checkpoint: " + msg); }

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) {
    if (s != 0 && n > std::numeric_limits<std::size_t>::max() / s) corrupt("shape overflows");
    n *= s;
  }
  return n;
}

Tensor matrix_tensor(std::string name, const Matrix& m) {
  return Tensor{std::move(name), {m.rows(), m.cols()}, m.values()};
}

Matrix tensor_matrix(const Tensor& t) {
  if (t.shape.size() != 2) corrupt("tensor '" + t.name + "' is not two-dimensional");
  return Matrix(t.shape[0], t.shape[1], t.values);
}

nlohmann::json modifiers_to_json(const std::vector<ModifierToken>& mods) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& m : mods) {
    out.push_back({{"surface", m.surface}, {"token_index", m.token_index}, {"trainable", m.trainable}});
  }
  return out;
}

template <typename T>
T meta_get(const nlohmann::json& meta, const char* key) {
  try {
    return meta.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("meta field '") + key + "': " + e.what());
  }
}

}  // namespace

const Tensor* Container::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const Tensor& Container::at(std::string_view name) const {
  const Tensor* t = find(name);
  if (!t) corrupt("missing tensor '" + std::string(name) + "'");
  return *t;
}

std::string container_to_bytes(const Container& c) {
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = kVersion;
  manifest["meta"] = c.meta;
  manifest["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : c.tensors) {
    if (product(t.shape) != t.values.size()) {
      fail(ErrorCode::InvalidInput, "checkpoint: tensor '" + t.name + "' shape does not match its data");
    }
    const std::size_t length = t.values.size() * sizeof(double);
    manifest["tensors"].push_back(
        {{"name", t.name}, {"shape", t.shape}, {"dtype", "f64"}, {"offset", offset}, {"length", length}});
    offset += length;
  }
  const std::string text = manifest.dump();
  std::string out(8, '\0');
  const std::uint64_t n = text.size();
  std::memcpy(out.data(), &n, 8);
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& t : c.tensors) {
    out.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(double));
  }
  return out;
}

Container container_from_bytes(std::string_view bytes) {
  if (bytes.size() < 8) corrupt("file shorter than its header");
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data(), 8);
  if (n > bytes.size() - 8) corrupt("manifest length exceeds file size");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(8, n));
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("manifest is not valid JSON: ") + e.what());
  }
  const std::string_view payload = bytes.substr(8 + n);
  Container c;
  try {
    if (manifest.at("format").get<std::string>() != kFormat) corrupt("bad format tag");
    if (manifest.at("version").get<int>() != kVersion) corrupt("unsupported version");
    c.meta = manifest.at("meta");
    if (!c.meta.is_object()) corrupt("meta is not an object");
    std::size_t expected = 0;
    for (const auto& e : manifest.at("tensors")) {
      Tensor t;
      t.name = e.at("name").get<std::string>();
      t.shape = e.at("shape").get<std::vector<std::size_t>>();
      if (e.at("dtype").get<std::string>() != "f64") corrupt("tensor '" + t.name + "' has unsupported dtype");
      const auto offset = e.at("offset").get<std::size_t>();
      const auto length = e.at("length").get<std::size_t>();
      const std::size_t count = product(t.shape);
      if (count > std::numeric_limits<std::size_t>::max() / sizeof(double) || length != count * sizeof(double)) {
        corrupt("tensor '" + t.name + "' length does not match its shape");
      }
      // Tensors are packed in manifest order; anything else is overlap or a gap.
      if (offset != expected) corrupt("tensor '" + t.name + "' offset is out of sequence");
      if (length > payload.size() || offset > payload.size() - length) {
        corrupt("tensor '" + t.name + "' extends past the end of the payload");
      }
      t.values.resize(count);
      std::memcpy(t.values.data(), payload.data() + offset, length);
      expected = offset + length;
      if (c.find(t.name)) corrupt("duplicate tensor '" + t.name + "'");
      c.tensors.push_back(std::move(t));
    }
    if (expected != payload.size()) corrupt("payload size does not match the manifest");
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("manifest: ") + e.what());
  }
  return c;
}

void write_file(const std::string& path, std::string_view bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "write failed for " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kind_name(CheckpointKind kind) {
  switch (kind) {
    case CheckpointKind::Base: return "base";
    case CheckpointKind::Delta: return "delta";
    case CheckpointKind::Merged: return "merged";
  }
  return "base";
}

CheckpointKind checkpoint_kind(const Container& c) {
  const auto k = meta_get<std::string>(c.meta, "kind");
  if (k == "base") return CheckpointKind::Base;
  if (k == "delta") return CheckpointKind::Delta;
  if (k == "merged") return CheckpointKind::Merged;
  corrupt("unknown kind '" + k + "'");
}

nlohmann::json dims_to_json(const ModelDims& d) {
  return {{"image_size", d.image_size}, {"patch", d.patch},   {"hidden", d.hidden},
          {"text_dim", d.text_dim},     {"attn_dim", d.attn_dim}, {"mlp", d.mlp},
          {"blocks", d.blocks}};
}

ModelDims dims_from_json(const nlohmann::json& j) {
  ModelDims d;
  for (const auto& [key, value] : j.items()) {
    std::size_t* field = key == "image_size" ? &d.image_size
                         : key == "patch"    ? &d.patch
                         : key == "hidden"   ? &d.hidden
                         : key == "text_dim" ? &d.text_dim
                         : key == "attn_dim" ? &d.attn_dim
                         : key == "mlp"      ? &d.mlp
                         : key == "blocks"   ? &d.blocks
                                             : nullptr;
    if (!field) fail(ErrorCode::InvalidInput, "model: unknown key '" + key + "'");
    if (!value.is_number_unsigned()) fail(ErrorCode::InvalidInput, "model." + key + " must be a non-negative integer");
    *field = value.get<std::size_t>();
  }
  d.validate();
  return d;
}

Container pipeline_to_container(const Pipeline& model, CheckpointKind kind, const nlohmann::json& extra) {
  if (kind == CheckpointKind::Delta) fail(ErrorCode::InvalidInput, "pipeline_to_container: use delta_to_container");
  Container c;
  c.meta = extra.is_object() ? extra : nlohmann::json::object();
  c.meta["kind"] = kind_name(kind);
  c.meta["model"] = dims_to_json(model.net.dims());
  c.meta["schedule_steps"] = model.schedule.steps();
  c.meta["vocab"] = {{"tokens", model.vocab.tokens()},
                     {"counts", model.vocab.counts()},
                     {"seed", model.vocab.seed()}};
  c.meta["modifier_tokens"] = modifiers_to_json(model.modifiers);
  for (const auto& e : model.net.params().entries()) c.tensors.push_back(matrix_tensor(e.name, e.value));
  c.tensors.push_back(matrix_tensor("text.embeddings", model.vocab.embeddings()));
  c.tensors.push_back(Tensor{"schedule.alpha_bar", {model.schedule.steps()}, model.schedule.alpha_bars()});
  return c;
}

Pipeline pipeline_from_container(const Container& c) {
  if (checkpoint_kind(c) == CheckpointKind::Delta) {
    fail(ErrorCode::InvalidInput, "checkpoint holds a delta; a base or merged model is required");
  }
  try {
    const ModelDims dims = dims_from_json(meta_get<nlohmann::json>(c.meta, "model"));
    DenoiserNet net = DenoiserNet::zeros(dims);
    for (auto& e : net.params().entries()) {
      Matrix m = tensor_matrix(c.at(e.name));
      if (!m.same_shape(e.value)) corrupt("tensor '" + e.name + "' has the wrong shape");
      e.value = std::move(m);
    }
    const auto& vj = meta_get<nlohmann::json>(c.meta, "vocab");
    const Matrix table = tensor_matrix(c.at("text.embeddings"));
    Vocabulary vocab(vj.at("tokens").get<std::vector<std::string>>(),
                     vj.at("counts").get<std::map<std::string, std::size_t>>(), table.cols(),
                     vj.at("seed").get<std::uint64_t>());
    vocab.set_embeddings(table);
    const Tensor& ab = c.at("schedule.alpha_bar");
    NoiseSchedule sched = NoiseSchedule::from_alpha_bar(ab.values);
    Pipeline p{std::move(net), std::move(vocab), std::move(sched), {}};
    for (const auto& mj : meta_get<nlohmann::json>(c.meta, "modifier_tokens")) {
      ModifierToken m{mj.at("surface").get<std::string>(), mj.at("token_index").get<std::size_t>(), {},
                      mj.value("trainable", true)};
      const auto row = p.vocab.embedding(m.token_index);
      m.embedding.assign(row.begin(), row.end());
      p.vocab.add_alias(m.surface, m.token_index);
      p.modifiers.push_back(std::move(m));
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    corrupt(e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CorruptCheckpoint) throw;
    corrupt(e.what());
  }
}

Container delta_to_container(const DeltaCheckpoint& delta, const ModelDims& dims) {
  Container c;
  c.meta["kind"] = "delta";
  c.meta["model"] = dims_to_json(dims);
  c.meta["energy_kept"] = delta.energy_kept;
  c.meta["modifier_tokens"] = modifiers_to_json(delta.modifiers);
  c.meta["entries"] = nlohmann::json::array();
  for (const auto& e : delta.entries) {
    c.meta["entries"].push_back({{"name", e.name},
                                 {"layer", e.layer},
                                 {"role", role_name(e.role)},
                                 {"factored", e.factored},
                                 {"rank", e.factored ? e.rank() : std::min(e.rows, e.cols)},
                                 {"shape", {e.rows, e.cols}},
                                 {"residual", e.residual}});
    if (e.factored) {
      c.tensors.push_back(matrix_tensor(e.name + ".u", e.u));
      c.tensors.push_back(Tensor{e.name + ".sigma", {e.sigma.size()}, e.sigma});
      c.tensors.push_back(matrix_tensor(e.name + ".vt", e.vt));
    } else {
      c.tensors.push_back(matrix_tensor(e.name + ".delta", e.dense));
    }
  }
  for (const auto& m : delta.modifiers) {
    c.tensors.push_back(Tensor{"modifier." + m.surface, {m.embedding.size()}, m.embedding});
  }
  return c;
}

DeltaCheckpoint delta_from_container(const Container& c) {
  if (checkpoint_kind(c) != CheckpointKind::Delta) {
    fail(ErrorCode::InvalidInput, std::string("checkpoint holds a ") + kind_name(checkpoint_kind(c)) +
                                      " model; a delta is required");
  }
  DeltaCheckpoint d;
  try {
    dims_from_json(meta_get<nlohmann::json>(c.meta, "model"));
    d.energy_kept = meta_get<double>(c.meta, "energy_kept");
    for (const auto& ej : meta_get<nlohmann::json>(c.meta, "entries")) {
      DeltaEntry e;
      e.name = ej.at("name").get<std::string>();
      e.layer = ej.at("layer").get<std::size_t>();
      const auto role = role_from_name(ej.at("role").get<std::string>());
      if (!role || !is_kv(*role)) corrupt("delta entry '" + e.name + "' is not a K/V projection");
      e.role = *role;
      e.factored = ej.at("factored").get<bool>();
      const auto shape = ej.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) corrupt("delta entry '" + e.name + "' shape must have two dimensions");
      e.rows = shape[0];
      e.cols = shape[1];
      e.residual = ej.at("residual").get<double>();
      if (e.factored) {
        e.u = tensor_matrix(c.at(e.name + ".u"));
        e.sigma = c.at(e.name + ".sigma").values;
        e.vt = tensor_matrix(c.at(e.name + ".vt"));
        if (e.u.rows() != e.rows || e.vt.cols() != e.cols || e.u.cols() != e.sigma.size() ||
            e.vt.rows() != e.sigma.size()) {
          corrupt("delta entry '" + e.name + "' factor shapes disagree");
        }
      } else {
        e.dense = tensor_matrix(c.at(e.name + ".delta"));
        if (e.dense.rows() != e.rows || e.dense.cols() != e.cols) corrupt("delta entry '" + e.name + "' shape disagrees");
      }
      d.entries.push_back(std::move(e));
    }
    for (const auto& mj : meta_get<nlohmann::json>(c.meta, "modifier_tokens")) {
      ModifierToken m{mj.at("surface").get<std::string>(), mj.at("token_index").get<std::size_t>(), {},
                      mj.value("trainable", true)};
      m.embedding = c.at("modifier." + m.surface).values;
      d.modifiers.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    corrupt(e.what());
  }
  return d;
}

void save_pipeline(const std::string& path, const Pipeline& model, CheckpointKind kind,
                   const nlohmann::json& extra) {
  write_file(path, container_to_bytes(pipeline_to_container(model, kind, extra)));
}

Pipeline load_pipeline(const std::string& path) {
  return pipeline_from_container(container_from_bytes(read_file(path)));
}

void save_delta(const std::string& path, const DeltaCheckpoint& delta, const ModelDims& dims) {
  write_file(path, container_to_bytes(delta_to_container(delta, dims)));
}

DeltaCheckpoint load_delta(const std::string& path) {
  return delta_from_container(container_from_bytes(read_file(path)));
}

}  // namespace cdiff
