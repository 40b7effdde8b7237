#pragma once

#include <string>

#include "hfx/model.hpp"
#include "hfx/peft.hpp"

namespace hfx {

// HFX1 container: magic "HFX1", u32 little-endian metadata length, UTF-8
// JSON metadata (format version, kind, config/spec, ordered tensor manifest,
// fingerprints), then each manifest tensor's payload concatenated in order.
// Full-precision tensors are 64-bit little-endian floats; quantized weights
// are int8 codes with a separate f64 scales entry per matrix.

void save_base_checkpoint(const std::string& path, const TransformerLM& model);
TransformerLM load_base_checkpoint(const std::string& path);

void save_adapter_checkpoint(const std::string& path, const AdapterState& state);
AdapterState load_adapter_checkpoint(const std::string& path);

// Peeks at the metadata kind without loading payloads.
std::string checkpoint_kind(const std::string& path);

}  // namespace hfx
