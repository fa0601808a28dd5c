#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace dcfuse {

// Exit codes of the command line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Relative output paths are placed under this directory when it is set.
inline constexpr const char* kOutputRootEnv = "DCFUSE_OUTPUT_ROOT";

// Runs one `dcfuse` invocation; args[0] is the program name. Failures print a
// single line `{"error":{"code":...,"message":...}}` to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::filesystem::path output_path(const std::filesystem::path& p);

} // namespace dcfuse
