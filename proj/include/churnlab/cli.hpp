#pragma once

namespace churnlab::cli {

// Full command dispatch; returns the process exit code.
// 0 = success, 1 = usage/config error, 2 = numeric failure or violated bound.
int run(int argc, const char* const* argv);

}  // namespace churnlab::cli
