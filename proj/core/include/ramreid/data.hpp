#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ramreid/ppm.hpp"
#include "ramreid/tensor.hpp"

namespace ramreid {

enum class Split { kTrain, kQuery, kGallery };

std::string_view split_name(Split split);
Split parse_split(std::string_view token);

struct Sample {
  std::string image_path;  // relative to the manifest directory unless absolute
  int vehicle_id = 0;
  std::optional<int> color_id;
  std::optional<int> type_id;
  std::optional<int> camera_id;
  Split split = Split::kTrain;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<Sample> samples;
  // Raw label -> dense 0-based label. Ids cover the train split only; the
  // attribute vocabularies cover every sample carrying the attribute.
  std::map<int, int> id_vocab;
  std::map<int, int> color_vocab;
  std::map<int, int> type_vocab;
  ImageHeader image_dims;

  std::vector<std::size_t> indices(Split split) const;
  std::size_t num_train_ids() const { return id_vocab.size(); }
  int train_label(const Sample& sample) const;
  // "color" or "type"; nullopt when the sample is unlabeled.
  std::optional<int> attribute_label(const Sample& sample, std::string_view attribute) const;
  std::size_t attribute_classes(std::string_view attribute) const;
  std::filesystem::path image_file(const Sample& sample) const;

  // Rebuilds the vocabularies from `samples`.
  void build_vocabularies();
};

// CSV with header `path,id,color,type,camera,split`; empty optional fields
// are allowed. Does not touch the file system.
DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& root,
                               const std::string& source = "<manifest>");
// Parses, then checks every image exists and shares the first image's size.
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

enum class ResizeMode { kNearest, kBilinear };
ResizeMode parse_resize_mode(std::string_view name);

Image resize_image(const Image& image, std::size_t height, std::size_t width, ResizeMode mode);

// CHW doubles in [-1, 1]; a 1-channel image is replicated when 3 are requested.
std::vector<double> image_to_chw(const Image& image, std::size_t channels, std::size_t height,
                                 std::size_t width, ResizeMode mode);

struct Batch {
  Tensor images;  // (n, C, H, W)
  std::vector<std::size_t> samples;
  std::vector<int> ids;  // dense train labels, -1 outside the train split
  // attribute name -> dense label per row, -1 where unlabeled
  std::map<std::string, std::vector<int>> attributes;
};

// Decoded, resized images held in memory for the whole run.
class Dataset {
 public:
  static Dataset load(DatasetManifest manifest, std::size_t channels, std::size_t height,
                      std::size_t width, ResizeMode mode);
  static Dataset from_images(DatasetManifest manifest, const std::vector<Image>& images,
                             std::size_t channels, std::size_t height, std::size_t width,
                             ResizeMode mode);

  const DatasetManifest& manifest() const { return manifest_; }
  std::size_t channels() const { return channels_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::span<const double> pixels(std::size_t sample) const;

  Tensor images(std::span<const std::size_t> samples) const;
  Batch batch(std::span<const std::size_t> samples) const;

 private:
  DatasetManifest manifest_;
  std::size_t channels_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> pixels_;
};

// Train-split sample indices, shuffled by (seed, epoch) and cut into batches
// of `batch_size`; the final batch may be shorter.
std::vector<std::vector<std::size_t>> make_batches(const DatasetManifest& manifest,
                                                   std::size_t batch_size, std::uint64_t seed,
                                                   int epoch);

}  // namespace ramreid
