// SPDX-License-Identifier: Apache-2.0
//
// quantdesk command-line driver. One subcommand per workbench area; every
// run is a pure function of (config, input files) and writes its reports
// plus a manifest into the output directory.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "quantdesk/driver.hpp"

namespace {

std::string read_params(const std::string& config_path, const std::string& inline_params) {
  nlohmann::json params = nlohmann::json::object();
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw std::runtime_error("cannot open config file '" + config_path + "'");
    params = nlohmann::json::parse(f);
  }
  if (!inline_params.empty()) {
    const nlohmann::json overrides = nlohmann::json::parse(inline_params);
    for (const auto& [k, v] : overrides.items()) params[k] = v;
  }
  return params.dump();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantdesk: a deterministic desk-scale workbench for block-scaled "
               "quantization, expert-routing cost models, mixed-precision assignment, "
               "recurrent cache error analysis, speculative-decoding accounting, and "
               "checkpoint merging"};
  app.require_subcommand(1);

  const std::vector<std::string> names = {"quantize",        "underflow-sweep", "qtrain-step",
                                          "moe-cost",        "autoquant-solve", "ssm-sim",
                                          "specdec-sim",     "merge"};
  struct Args {
    std::string config;
    std::string params;
    std::string out;
    uint64_t seed = 0;
  };
  std::map<std::string, Args> args;
  for (const auto& name : names) {
    auto* sub = app.add_subcommand(name);
    Args& a = args[name];
    sub->add_option("--config", a.config, "JSON parameter file");
    sub->add_option("--params", a.params, "inline JSON overriding config fields");
    sub->add_option("--out", a.out, "output directory")->required();
    sub->add_option("--seed", a.seed, "64-bit seed (fans out to per-module Philox keys)");
  }

  CLI11_PARSE(app, argc, argv);

  const std::string chosen = app.get_subcommands().front()->get_name();
  const Args& a = args[chosen];
  quantdesk::RunConfig cfg;
  cfg.subcommand = chosen;
  cfg.seed = a.seed;
  cfg.out_dir = a.out;
  try {
    cfg.params_json = read_params(a.config, a.params);
  } catch (const std::exception& e) {
    const nlohmann::json err{{"error", {{"subcommand", chosen}, {"message", e.what()}}}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return quantdesk::run(cfg);
}
