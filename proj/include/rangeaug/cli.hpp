#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rangeaug {

// Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitRuntime = 2;

// args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace rangeaug
