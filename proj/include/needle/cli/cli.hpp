#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "needle/common/settings.hpp"

namespace needle::cli {

enum class OutputFormat { Table, Plain, Structured };

struct CliConfig {
  HostPort apiAddr;
  OutputFormat output = OutputFormat::Table;
  bool verbose = false;
};

// Reads key=value lines (api_addr, output); '#' starts a comment. Missing
// file means defaults. Throws InvalidArgument on bad values.
CliConfig loadCliConfig(const std::filesystem::path& path);
std::filesystem::path defaultCliConfigPath();  // ~/.needle/cli.conf

// Process-level inputs, injectable for tests.
struct CliEnv {
  std::istream* in = &std::cin;
  bool interactive = false;  // stdin and stdout are terminals
  std::optional<std::filesystem::path> configPath;
  std::filesystem::path selfExe = "/proc/self/exe";  // re-executed for service/ui start
};

// Exit codes: 0 success, 1 runtime or API failure, 2 usage error.
int runCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const CliEnv& env = {});

}  // namespace needle::cli
