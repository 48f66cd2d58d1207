// Copyright 2026 The qatlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// qatlab command-line entry point.

#include <CLI11.hpp>

#include <iostream>

#include "qatlab/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Quantization-aware training experiments"};
  app.require_subcommand(1);
  qatlab::CommandArgs args;

  for (const auto& [name, fn] : qatlab::commands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", args.config_path, "JSON config file");
    sub->add_option("--set", args.sets, "Override key=value (repeatable)");
    sub->add_option("--out", args.out_dir, "Output directory")->capture_default_str();
    sub->add_option("--preset", args.preset, "Named preset");
    if (name == "export-hist") {
      sub->add_option("--layer", args.layer, "Layer name")->required();
      sub->add_option("--what", args.what, "weights or codebook")->capture_default_str();
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return qatlab::run_command(app.get_subcommands().front()->get_name(), args, std::cerr);
}
