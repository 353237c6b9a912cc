// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "quantdesk/numerics.hpp"

namespace quantdesk {

// One CLI invocation. `params_json` holds the subcommand's parameter block
// (raw JSON text, "{}" when empty); identical configs produce byte-identical
// output files, including every stochastic-rounding path.
struct RunConfig {
  std::string subcommand;
  uint64_t seed = 0;
  std::string out_dir;
  std::string params_json = "{}";
};

// Executes a subcommand: writes report files plus a manifest.json into
// out_dir and returns 0, or prints a structured JSON error record to stderr
// and returns nonzero.
int run(const RunConfig& config);

// Seed fan-out: every module stream is keyed by (seed, subcommand id, call
// index) through one Philox evaluation, so adding subcommands or calls never
// perturbs existing streams.
PhiloxKey derive_key(uint64_t seed, uint32_t subcommand_id, uint64_t call_index);

// Stable ids for the key derivation, one per subcommand.
uint32_t subcommand_id(const std::string& subcommand);

}  // namespace quantdesk
