// SPDX-License-Identifier: Apache-2.0
#include "customdiff/customdiff.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "customdiff/analysis.hpp"
#include "customdiff/checkpoint.hpp"
#include "customdiff/commands.hpp"
#include "customdiff/error.hpp"

struct cdiff_model {
  cdiff::Pipeline pipeline;
};

namespace {

thread_local std::string last_error;

cdiff_status status_of(cdiff::ErrorCode code) {
  using cdiff::ErrorCode;
  switch (code) {
    case ErrorCode::InvalidInput: return CDIFF_INVALID_INPUT;
    case ErrorCode::SingularMatrix: return CDIFF_SINGULAR_MATRIX;
    case ErrorCode::NumericalFailure: return CDIFF_NUMERICAL_FAILURE;
    case ErrorCode::UnknownToken: return CDIFF_UNKNOWN_TOKEN;
    case ErrorCode::NoRareToken: return CDIFF_NO_RARE_TOKEN;
    case ErrorCode::EmptyRegularizationSet: return CDIFF_EMPTY_REGULARIZATION_SET;
    case ErrorCode::Divergence: return CDIFF_DIVERGENCE;
    case ErrorCode::DegenerateRegularization: return CDIFF_DEGENERATE_REGULARIZATION;
    case ErrorCode::SingularTargetSystem: return CDIFF_SINGULAR_TARGET_SYSTEM;
    case ErrorCode::CorruptCheckpoint: return CDIFF_CORRUPT_CHECKPOINT;
    case ErrorCode::Io: return CDIFF_IO;
    case ErrorCode::Usage: return CDIFF_USAGE;
  }
  return CDIFF_INTERNAL;
}

template <typename F>
cdiff_status guarded(F&& body) {
  try {
    body();
    last_error.clear();
    return CDIFF_OK;
  } catch (const cdiff::Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const nlohmann::json::exception& e) {
    last_error = e.what();
    return CDIFF_INVALID_INPUT;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return CDIFF_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return CDIFF_INTERNAL;
  } catch (...) {
    last_error = "unknown failure";
    return CDIFF_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) cdiff::fail(cdiff::ErrorCode::InvalidInput, what);
}

}  // namespace

extern "C" {

const char* cdiff_version(void) { return cdiff::kVersion; }

const char* cdiff_last_error(void) { return last_error.c_str(); }

const char* cdiff_status_name(cdiff_status status) {
  switch (status) {
    case CDIFF_OK: return "ok";
    case CDIFF_INVALID_INPUT: return "invalid_input";
    case CDIFF_SINGULAR_MATRIX: return "singular_matrix";
    case CDIFF_NUMERICAL_FAILURE: return "numerical_failure";
    case CDIFF_UNKNOWN_TOKEN: return "unknown_token";
    case CDIFF_NO_RARE_TOKEN: return "no_rare_token";
    case CDIFF_EMPTY_REGULARIZATION_SET: return "empty_regularization_set";
    case CDIFF_DIVERGENCE: return "divergence";
    case CDIFF_DEGENERATE_REGULARIZATION: return "degenerate_regularization";
    case CDIFF_SINGULAR_TARGET_SYSTEM: return "singular_target_system";
    case CDIFF_CORRUPT_CHECKPOINT: return "corrupt_checkpoint";
    case CDIFF_IO: return "io";
    case CDIFF_USAGE: return "usage";
    case CDIFF_INTERNAL: return "internal";
  }
  return "unknown";
}

cdiff_status cdiff_command(const char* name, const char* options_json, char** summary) {
  if (summary) *summary = nullptr;
  return guarded([&] {
    require(name != nullptr, "cdiff_command: null command name");
    const auto opts = options_json && *options_json ? nlohmann::json::parse(options_json) : nlohmann::json::object();
    const std::string text = cdiff::run_command(name, opts);
    if (summary) {
      char* copy = static_cast<char*>(std::malloc(text.size() + 1));
      if (!copy) throw std::bad_alloc();
      std::memcpy(copy, text.c_str(), text.size() + 1);
      *summary = copy;
    }
  });
}

void cdiff_string_free(char* s) { std::free(s); }

cdiff_status cdiff_model_load(const char* path, cdiff_model** out) {
  return guarded([&] {
    require(path && out, "cdiff_model_load: null argument");
    *out = nullptr;
    *out = new cdiff_model{cdiff::load_pipeline(path)};
  });
}

void cdiff_model_free(cdiff_model* model) { delete model; }

cdiff_status cdiff_model_apply_delta(cdiff_model* model, const char* delta_path) {
  return guarded([&] {
    require(model && delta_path, "cdiff_model_apply_delta: null argument");
    model->pipeline = cdiff::apply_delta(model->pipeline, cdiff::load_delta(delta_path));
  });
}

cdiff_status cdiff_model_image_size(const cdiff_model* model, size_t* size) {
  return guarded([&] {
    require(model && size, "cdiff_model_image_size: null argument");
    *size = model->pipeline.net.dims().image_size;
  });
}

cdiff_status cdiff_model_sample(const cdiff_model* model, const char* prompt, size_t steps, double scale,
                                uint64_t seed, double* pixels, size_t capacity) {
  return guarded([&] {
    require(model && prompt && pixels, "cdiff_model_sample: null argument");
    require(steps >= 1, "cdiff_model_sample: steps must be >= 1");
    const std::size_t n = model->pipeline.net.dims().image_size;
    require(capacity >= n * n, "cdiff_model_sample: pixel buffer too small");
    cdiff::SamplerOptions so;
    so.steps = steps;
    so.scale = scale;
    so.seed = seed;
    const cdiff::Matrix img = model->pipeline.sample(prompt, so);
    std::memcpy(pixels, img.data().data(), n * n * sizeof(double));
  });
}

}  // extern "C"
