#pragma once

// Command-line entry point: simulate, fit, predict, summary, score.
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.

#include <ostream>

namespace deepwarp::cli {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace deepwarp::cli
