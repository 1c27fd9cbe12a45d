#pragma once

#include <filesystem>

#include "tacorr/pipeline.hpp"

namespace tacorr {

// Versioned binary blob: model config followed by every named parameter
// tensor. Loading verifies the magic, version, names and shapes; a dimension
// mismatch is an error, never a silent cast.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace tacorr
