#include "ramreid/region.hpp"

#include "ramreid/error.hpp"
#include "ramreid/ops.hpp"

namespace ramreid {

std::pair<std::size_t, std::size_t> RegionSpec::rows(std::size_t i) const {
  if (i >= count) throw ValueError("region index " + std::to_string(i) + " out of range");
  return {i * stride(), i * stride() + region_h};
}

void RegionSpec::validate() const {
  if (count == 0) throw ValueError("region count must be positive");
  if (region_h == 0 || region_h > map_h) {
    throw ValueError("region height " + std::to_string(region_h) + " must lie in [1, " +
                     std::to_string(map_h) + "]");
  }
  if (overlap_h >= region_h) throw ValueError("region overlap must be smaller than the region height");
  if ((count - 1) * stride() + region_h != map_h) {
    throw ValueError(std::to_string(count) + " regions of " + std::to_string(region_h) +
                     " rows overlapping by " + std::to_string(overlap_h) +
                     " do not tile a map of height " + std::to_string(map_h));
  }
}

std::vector<Tensor> split_regions(const Tensor& map, const RegionSpec& spec) {
  spec.validate();
  if (map.rank() != 4 || map.dim(1) != spec.map_c || map.dim(2) != spec.map_h ||
      map.dim(3) != spec.map_w) {
    throw ShapeError("split_regions: map " + shape_to_string(map.shape()) + " does not match spec (" +
                     std::to_string(spec.map_c) + ", " + std::to_string(spec.map_h) + ", " +
                     std::to_string(spec.map_w) + ")");
  }
  std::vector<Tensor> regions;
  regions.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    const auto [begin, end] = spec.rows(i);
    regions.push_back(slice(map, 2, begin, end));
  }
  return regions;
}

}  // namespace ramreid
