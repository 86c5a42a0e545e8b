#include "fixtures.hpp"

namespace ramreid::testing {

SyntheticSpec tiny_spec(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_ids = 6;
  spec.images_per_id = 4;
  spec.test_ids = 2;
  spec.queries_per_id = 1;
  spec.seed = seed;
  return spec;
}

Dataset to_dataset(const SyntheticDataset& synthetic) {
  return Dataset::from_images(synthetic.manifest, synthetic.images, 3, synthetic.spec.height,
                              synthetic.spec.width, ResizeMode::kNearest);
}

RamConfig config_for(const DatasetManifest& manifest, std::size_t fc_dim, BranchSet branches) {
  RamConfig c;
  c.fc_dim = fc_dim;
  c.num_ids = manifest.num_train_ids();
  c.attributes = {{"color", manifest.attribute_classes("color")},
                  {"type", manifest.attribute_classes("type")}};
  c.branches = branches;
  return c;
}

}  // namespace ramreid::testing
