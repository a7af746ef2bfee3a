#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gapfill::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Exit codes: 0 success, 1 invalid flags or configuration, 2 runtime failure.
int run(int argc, char** argv);
/// Same as above with explicit streams; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gapfill::cli
