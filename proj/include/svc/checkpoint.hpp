#pragma once

#include <string>
#include <vector>

#include "svc/config.hpp"
#include "svc/params.hpp"

namespace svc {

// Checkpoint container: magic, JSON manifest (tensor names, shapes, groups,
// per-group config fingerprints), then the flat little-endian float64 payload
// in manifest order. Round-trips are byte-identical.

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const ExperimentConfig& cfg,
                     const std::vector<std::string>& groups);

// Loads the listed groups into `store`. Group fingerprints are verified
// against the active config and every tensor shape against the registered
// layout; any mismatch throws VersionError.
void load_checkpoint(const std::string& path, ParamStore& store,
                     const ExperimentConfig& cfg,
                     const std::vector<std::string>& groups);

// Group names present in a checkpoint file, in manifest order.
std::vector<std::string> checkpoint_groups(const std::string& path);

// True if the file exists, parses, and carries all listed groups with
// fingerprints matching the active config.
bool checkpoint_compatible(const std::string& path, const ExperimentConfig& cfg,
                           const std::vector<std::string>& groups);

}  // namespace svc
