#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace anyssr {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kVerification = 2;
inline constexpr int kIo = 3;
}  // namespace exit_code

/// Entry point of the `anyssr` tool. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace anyssr
