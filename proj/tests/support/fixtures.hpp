#pragma once

#include <cstdint>

#include "ramreid/data.hpp"
#include "ramreid/model.hpp"
#include "ramreid/synthetic.hpp"

namespace ramreid::testing {

// 6 identities x 4 images, 2 held out: 16 training images over 4 ids.
SyntheticSpec tiny_spec(std::uint64_t seed = 1);

Dataset to_dataset(const SyntheticDataset& synthetic);

// Model config sized for a manifest: ids and attribute classes come from it.
RamConfig config_for(const DatasetManifest& manifest, std::size_t fc_dim, BranchSet branches);

}  // namespace ramreid::testing
