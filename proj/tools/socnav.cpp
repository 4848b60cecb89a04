// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "socnav/orchestrator.hpp"

int main(int argc, char** argv) { return socnav::cli::run_cli(argc, argv, std::cout, std::cerr); }
