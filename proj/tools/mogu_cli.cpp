// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "mogu/cli.hpp"

int main(int argc, char** argv) { return mogu::run_cli(argc, argv, std::cout, std::cerr); }
