// Copyright 2026 The arflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Usage: acceptance [--seed N] [--train-seconds S] [--mixture-seconds S]
//                   [--output-dir DIR] [--only 1,2,...]

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>

#include "arflow/verify.hpp"

int main(int argc, char** argv) {
  arflow::VerifyOptions options;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (i + 1 >= argc) {
      std::cerr << "missing value for " << arg << "\n";
      return 1;
    }
    const std::string value = argv[++i];
    if (arg == "--seed") {
      options.seed = std::stoull(value);
    } else if (arg == "--train-seconds") {
      options.train_seconds = std::stod(value);
    } else if (arg == "--mixture-seconds") {
      options.mixture_seconds = std::stod(value);
    } else if (arg == "--output-dir") {
      options.output_dir = value;
    } else if (arg == "--only") {
      std::stringstream ss(value);
      for (std::string item; std::getline(ss, item, ',');) options.only.insert(std::stoi(item));
    } else {
      std::cerr << "unknown flag " << arg << "\n";
      return 1;
    }
  }
  options.progress = [](const std::string& msg) { std::cerr << "  " << msg << "\n"; };
  const auto results = arflow::run_acceptance(options, [](const arflow::CheckResult& r) {
    std::cout << arflow::format_result(r) << std::endl;
  });
  int failed = 0;
  for (const auto& r : results) failed += r.passed ? 0 : 1;
  std::cout << (results.size() - static_cast<std::size_t>(failed)) << "/" << results.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
