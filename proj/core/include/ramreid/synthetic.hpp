#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <utility>
#include <vector>

#include "ramreid/config.hpp"
#include "ramreid/data.hpp"
#include "ramreid/ppm.hpp"

namespace ramreid {

enum class CueRegion { kTop, kMiddle, kBottom };

std::string_view cue_region_name(CueRegion region);

// Images are split into three equal horizontal bands; every identity carries
// a unique binary patch inside one of them. Everything else in an image is
// shared by all identities of the same type and color, plus pixel noise.
struct SyntheticSpec {
  std::size_t num_ids = 20;
  std::size_t images_per_id = 10;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_colors = 4;
  std::size_t num_types = 3;
  // Empty means cycle top, middle, bottom over identities; otherwise one
  // entry applies to all identities or one entry per identity.
  std::vector<CueRegion> cue_regions;
  std::size_t patch_h = 6;
  std::size_t patch_w = 10;
  double patch_amplitude = 0.3;
  double noise_std = 0.25;
  // The last `test_ids` identities are held out; each contributes
  // `queries_per_id` query images, the rest of its images go to the gallery.
  std::size_t test_ids = 10;
  std::size_t queries_per_id = 2;
  std::uint64_t seed = 1;

  void validate() const;
  CueRegion cue_region(std::size_t id) const;
  // Image rows [begin, end) of a band.
  std::pair<std::size_t, std::size_t> band_rows(CueRegion region) const;

  static SyntheticSpec from_config(const KeyValueConfig& config);
  KeyValueConfig to_config() const;
};

struct SyntheticIdentity {
  std::size_t type = 0;
  std::size_t color = 0;
  CueRegion cue = CueRegion::kTop;
  std::size_t patch_y = 0;
  std::size_t patch_x = 0;
  std::vector<std::uint8_t> pattern;  // patch_h * patch_w bits
};

struct SyntheticDataset {
  SyntheticSpec spec;
  std::vector<SyntheticIdentity> identities;
  DatasetManifest manifest;
  std::vector<Image> images;  // parallel to manifest.samples
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

// Writes images/*.ppm, manifest.csv and spec.txt into `dir`.
void write_synthetic(const SyntheticDataset& dataset, const std::filesystem::path& dir);

}  // namespace ramreid
