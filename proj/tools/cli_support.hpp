#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

namespace skipseg::cli {

/// Thrown when a declared input path does not exist; maps to exit code 1.
struct MissingInput {
  std::string path;
};

/// Expands `--config <file.json>` into command-line arguments. Keys are flag
/// names without dashes; values given explicitly on the command line win.
/// A "subcommand" key selects the subcommand when none is given.
std::vector<std::string> expand_config(const std::vector<std::string>& args,
                                       const std::vector<std::string>& subcommands);

/// Every resolved option of the app and the chosen subcommand as JSON with
/// the same keys the config loader accepts.
std::string manifest_json(const CLI::App& app, const CLI::App& sub);

/// Writes the manifest next to `output` (a file or a directory).
void write_manifest(const CLI::App& app, const CLI::App& sub, const std::filesystem::path& output);

void require_inputs(const std::vector<std::string>& paths);

/// Expands directories to their files with the given extension, sorted.
std::vector<std::string> expand_inputs(const std::vector<std::string>& paths, const std::string& extension);

}  // namespace skipseg::cli
