// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return dagger::run_cli(argc, argv, std::cout, std::cerr); }
