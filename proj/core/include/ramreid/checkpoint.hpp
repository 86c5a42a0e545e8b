#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "ramreid/optim.hpp"

namespace ramreid {

// Writes one RAMT file per tensor plus manifest.txt with a line
// `<name> <file> <d0>x<d1>x...` per tensor, in the given order.
void save_tensor_dir(const std::filesystem::path& dir, std::span<const NamedTensor> tensors);

// Reads a directory written by save_tensor_dir; shapes are checked against
// the manifest.
std::vector<NamedTensor> load_tensor_dir(const std::filesystem::path& dir);

}  // namespace ramreid
