// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace cil {

/// Entry point behind the `cil` binary. Exit codes: 0 on success,
/// 2 for configuration/usage errors, 3 for numeric failures.
int run_cli(int argc, const char* const* argv);

}  // namespace cil
