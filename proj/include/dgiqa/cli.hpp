// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>

namespace dgiqa {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `dgiqa` tool. Reports go to `out` as JSON lines,
/// diagnostics and usage text to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dgiqa
