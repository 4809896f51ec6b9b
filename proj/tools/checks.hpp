// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "symconj/graph.hpp"

namespace symconj::cli {

/// A model read from a text file: the graph dump, with "# latent NAME
/// FAMILY" comment lines naming each latent and its expected family.
struct ModelFile {
  std::string path;
  TermGraph log_joint;
  std::vector<std::pair<std::string, std::string>> latents;
};

/// Throws ParseError.
ModelFile read_model_file(const std::string& path);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<CheckResult> check_rewrite();
std::vector<CheckResult> check_expfam();
std::vector<CheckResult> check_conjugacy(const std::vector<ModelFile>& extra);
std::vector<CheckResult> check_inference();

}  // namespace symconj::cli
