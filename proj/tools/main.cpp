#include <cstdlib>
#include <iostream>
#include <sstream>

#include "cli.hpp"
#include "mrfalign/error.hpp"
#include "mrfalign/io.hpp"

namespace mrfalign::cli {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string unquote(std::string v) {
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) return v.substr(1, v.size() - 2);
  return v;
}

bool excluded_key(std::string_view line, bool seed_used) {
  for (std::string_view key : {"threads=", "output=", "config="}) {
    if (line.rfind(key, 0) == 0) return true;
  }
  return !seed_used && line.rfind("seed=", 0) == 0;
}

std::size_t default_threads() {
  const char* env = std::getenv("MRFALIGN_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ArgumentError("MRFALIGN_THREADS must be a positive integer, got '" + std::string(env) + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace

void log(std::string_view line) { std::cerr << line << '\n'; }

std::string Context::effective_config() const { return sub->config_to_str(true, false); }

std::string Context::config_hash() const {
  std::istringstream in(effective_config());
  std::string kept, line;
  while (std::getline(in, line)) {
    if (!excluded_key(line, seed_used)) kept += line + "\n";
  }
  return hex64(fnv1a(std::string(sub->get_name()) + "\n" + kept));
}

std::string Context::header(const std::vector<std::string>& notes) const {
  std::string out = "# mrfalign " + std::string(kToolkitVersion) + " config=" + config_hash() + "\n";
  for (const auto& n : notes) out += "# " + n + "\n";
  return out;
}

void Context::emit(std::string_view body, const std::vector<std::string>& notes) const {
  const auto text = header(notes) + std::string(body);
  if (output.empty() || output == "-") {
    std::cout << text << std::flush;
  } else {
    write_file(output, text);
  }
}

void Context::emit_to(const std::filesystem::path& path, std::string_view body) const {
  write_file(path, header() + std::string(body));
}

void add_common_options(CLI::App* sub, Context& ctx) {
  sub->add_option("--config", ctx.config_path, "Flat 'key = value' file; flags override it");
  sub->add_option("--threads", ctx.threads, "Worker threads (default: MRFALIGN_THREADS or 1)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--seed", ctx.seed, "Seed for every random draw")->capture_default_str();
  sub->add_option("-o,--output", ctx.output, "Primary output file (default: stdout)");
}

void apply_config_file(CLI::App* sub, const std::string& path) {
  const auto text = read_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#' || t.front() == '[') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw FormatError(path + ": line " + std::to_string(number) + " is not 'key = value'");
    auto key = trim(std::string_view(t).substr(0, eq));
    const auto value = unquote(trim(std::string_view(t).substr(eq + 1)));
    for (auto& c : key) {
      if (c == '_') c = '-';
    }
    if (key == "config") throw FormatError(path + ": config files cannot include other config files");
    CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr) opt = sub->get_option_no_throw(key);
    if (opt == nullptr) throw ArgumentError(path + ": unknown key '" + key + "' for " + sub->get_name());
    if (opt->count() > 0) continue;
    if (opt->get_expected_max() > 1 || opt->get_items_expected_max() > 1) {
      std::istringstream items(value);
      std::string item;
      while (items >> item) opt->add_result(unquote(item));
    } else {
      opt->add_result(value);
    }
    opt->run_callback();
  }
}

}  // namespace mrfalign::cli

int main(int argc, char** argv) {
  using namespace mrfalign;
  using namespace mrfalign::cli;
  CLI::App app{"mrfalign: MRF-MRF alignment, homology search, and joint contact prediction"};
  app.set_version_flag("--version", std::string(kToolkitVersion));
  app.require_subcommand(1);
  Context ctx;
  std::vector<std::pair<CLI::App*, Command>> commands;
  try {
    ctx.threads = default_threads();
    register_commands(app, ctx, commands);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    for (auto& [sub, run] : commands) {
      if (!sub->parsed()) continue;
      ctx.sub = sub;
      if (!ctx.config_path.empty()) apply_config_file(sub, ctx.config_path);
      std::cerr << "# effective config (" << sub->get_name() << ")\n" << ctx.effective_config();
      run(ctx);
      return 0;
    }
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
