#pragma once

#include <string>
#include <vector>

namespace advcast {

/// Entry point behind the `advcast` executable. `args` excludes the program
/// name. Returns 0 on success, 1 on validation errors, 2 on runtime failures.
int run_command(const std::vector<std::string>& args);

}  // namespace advcast
