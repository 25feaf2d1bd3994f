#pragma once

// Stage orchestration on disk: each command reads upstream artifacts from
// the output directory, verifies they exist, writes its own artifacts plus
// a manifest with input digests and the config hash, and is byte-for-byte
// idempotent under an unchanged config and seed.

#include <map>
#include <string>
#include <vector>

#include "forge/runconfig.hpp"

namespace forge {

// fnv1a64 over the file bytes, hex-encoded. Missing file throws
// MissingArtifact.
std::string file_digest(const std::string& path);

void require_artifact(const std::string& path);

// Stage implementations; all throw on failure (ConfigError,
// MissingArtifact, ForgeError).
void cmd_synth(const RunConfig& cfg);
void cmd_ingest(const RunConfig& cfg);
void cmd_probes(const RunConfig& cfg);
void cmd_capmodels(const RunConfig& cfg);
void cmd_influence(const RunConfig& cfg);
void cmd_mix(const RunConfig& cfg);
void cmd_loo(const RunConfig& cfg);
void cmd_coevolve(const RunConfig& cfg);
void cmd_diag(const RunConfig& cfg);

extern const std::vector<std::string> kPipelineOrder;

// Dispatches one command (or "all" for the whole pipeline in order) and
// maps failures to exit statuses: 0 ok, 2 missing upstream artifact,
// 3 config validation error, 1 anything else. Messages go to stderr.
int run_command(const std::string& name, const RunConfig& cfg);

}  // namespace forge
