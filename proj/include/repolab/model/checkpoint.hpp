#pragma once

#include <filesystem>
#include <string>

#include "repolab/model/params.hpp"

namespace repolab::model {

// Writes `manifest_path` (key=value text) and a sibling blob named
// `<stem>.bin` holding every tensor as little-endian float64 in manifest order.
void save_checkpoint(const TransformerParams& params, const std::filesystem::path& manifest_path);

// Throws ParseError, IoError.
TransformerParams load_checkpoint(const std::filesystem::path& manifest_path);

// SHA-256 over the blob bytes the checkpoint would contain.
std::string params_digest(const TransformerParams& params);

}  // namespace repolab::model
