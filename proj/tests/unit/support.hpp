#pragma once

#include <filesystem>
#include <string>

namespace slab::test {

// Fresh, empty scratch directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace slab::test
