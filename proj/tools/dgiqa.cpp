// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "dgiqa/cli.hpp"

int main(int argc, char** argv) { return dgiqa::run_cli(argc, argv, std::cout, std::cerr); }
