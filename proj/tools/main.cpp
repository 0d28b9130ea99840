// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#include "cil/cli.hpp"

int main(int argc, char** argv) { return cil::run_cli(argc, argv); }
