#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "CLI11.hpp"

namespace mrfalign::cli {

// Options shared by every subcommand, plus the output plumbing.
struct Context {
  CLI::App* sub = nullptr;
  std::string config_path;
  std::size_t threads = 1;
  std::uint64_t seed = 1;
  std::string output;
  // Commands that draw random numbers set this; otherwise the seed stays out of the hash.
  bool seed_used = false;

  std::string effective_config() const;
  std::string config_hash() const;
  // "# mrfalign <version> config=<hash>" plus extra comment lines.
  std::string header(const std::vector<std::string>& notes = {}) const;
  // Writes header + body to --output, or stdout when it is empty.
  void emit(std::string_view body, const std::vector<std::string>& notes = {}) const;
  void emit_to(const std::filesystem::path& path, std::string_view body) const;
};

using Command = std::function<void(Context&)>;

// --config, --threads, --seed, and -o on every subcommand.
void add_common_options(CLI::App* sub, Context& ctx);

void register_commands(CLI::App& app, Context& ctx, std::vector<std::pair<CLI::App*, Command>>& commands);

// Reads "key = value" lines and feeds them to options of `sub` not set on the command line.
void apply_config_file(CLI::App* sub, const std::string& path);

void log(std::string_view line);

}  // namespace mrfalign::cli
