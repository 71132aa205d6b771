// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <json.hpp>

#include "tensor.hpp"

namespace wmmon::nnkit {

using json = nlohmann::ordered_json;

// Checkpoint layout: magic "WMCKPT01"; u32 header length; JSON header
// { "meta": {...}, "tensors": [ {"name", "shape", "offset"} ] }; then
// concatenated f32 little-endian buffers. Offsets are byte offsets from the
// start of the data section that follows the header.
void save_checkpoint(const ParamSet& params, const json& meta, const std::filesystem::path& path);
std::pair<ParamSet, json> load_checkpoint(const std::filesystem::path& path);

} // namespace wmmon::nnkit
