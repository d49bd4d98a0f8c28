// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace petdiff::cli {

/// Process exit codes.
enum ExitCode : int { ok = 0, usage_error = 1, config_error = 2, data_error = 3, numerical_error = 4 };

enum class Command { simulate_dose, train, sample, evaluate, analyze_cka };

std::optional<Command> parse_command(const std::string& name);
std::string to_string(Command c);

struct Invocation {
    Command command = Command::train;
    std::filesystem::path config_path;     // empty: defaults only
    std::vector<std::string> overrides;    // "a.b=value"
    std::filesystem::path run_dir;         // empty: <run root>/<timestamp>-<hash>-<command>
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

/// Executes one workflow and maps failures onto ExitCode.
int run(const Invocation& inv);

/// Parses argv ("petdiff <command> [options]") and calls run().
int main(int argc, char** argv);

/// Run root used when --run-dir is absent: $PETDIFF_RUN_ROOT or ./runs.
std::filesystem::path default_run_root();

/// SHA-256 over the core and tool sources this binary was built from.
std::string source_digest();

}  // namespace petdiff::cli
