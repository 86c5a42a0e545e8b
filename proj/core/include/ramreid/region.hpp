#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "ramreid/tensor.hpp"

namespace ramreid {

// k horizontal bands of a (C, H, W) feature map. Neighbouring bands share
// `overlap_h` rows and the bands exactly tile the map height:
//   (count - 1) * stride + region_h == map_h,  stride = region_h - overlap_h.
struct RegionSpec {
  std::size_t count = 3;
  std::size_t map_c = 512;
  std::size_t map_h = 13;
  std::size_t map_w = 13;
  std::size_t region_h = 7;
  std::size_t overlap_h = 4;

  std::size_t stride() const { return region_h - overlap_h; }
  // Half-open row range [first, second) of band i.
  std::pair<std::size_t, std::size_t> rows(std::size_t i) const;
  void validate() const;
};

// Cuts the bands out of an NCHW map. Gradients from overlapping bands add up
// on the shared rows.
std::vector<Tensor> split_regions(const Tensor& map, const RegionSpec& spec);

}  // namespace ramreid
