#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "uwbtdoa/error.hpp"
#include "uwbtdoa/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Args {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
};

void print_error(std::string_view code, const std::string& message) {
  std::cerr << "error: " << json{{"code", code}, {"message", message}}.dump() << '\n';
}

json load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw uwbtdoa::Error(uwbtdoa::ErrorCode::kIo, "cannot open config " + path.string());
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw uwbtdoa::Error(uwbtdoa::ErrorCode::kConfiguration,
                         path.string() + ": " + e.what());
  }
}

using Verb = void (*)(const json&, const fs::path&, std::uint64_t, const fs::path&);

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UWB TDOA bias learning and robust state estimation"};
  app.require_subcommand(1);

  Args args;
  Verb verb = nullptr;
  auto add = [&](const char* name, const char* help, Verb fn) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", args.config, "experiment JSON")->required();
    sub->add_option("--seed", args.seed, "base seed")->required();
    sub->add_option("--out", args.out, "output directory")->required();
    sub->callback([&verb, fn] { verb = fn; });
  };
  add("generate", "synthesize TDOA datasets", &uwbtdoa::cmd_generate);
  add("train", "train the bias network", &uwbtdoa::cmd_train);
  add("run", "run the estimator on a simulated flight", &uwbtdoa::cmd_run);
  add("eval", "evaluate a model on a held-out split", &uwbtdoa::cmd_eval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    const fs::path config_path = fs::absolute(args.config);
    const json config = load_config(config_path);
    verb(config, config_path.parent_path(), args.seed, args.out);
  } catch (const uwbtdoa::Error& e) {
    print_error(uwbtdoa::to_string(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
