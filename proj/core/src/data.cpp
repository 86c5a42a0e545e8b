#include "ramreid/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ramreid/config.hpp"
#include "ramreid/error.hpp"
#include "ramreid/rng.hpp"

namespace ramreid {

namespace {

constexpr std::string_view kManifestHeader = "path,id,color,type,camera,split";

int parse_label(std::string_view field, const std::string& where, const char* column) {
  int value = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || value < 0) {
    throw ParseError(where + ": column `" + column + "` needs a non-negative integer, got `" +
                     std::string(field) + "`");
  }
  return value;
}

std::optional<int> parse_optional_label(std::string_view field, const std::string& where,
                                        const char* column) {
  if (field.empty()) return std::nullopt;
  return parse_label(field, where, column);
}

void build_vocab(std::map<int, int>& vocab) {
  int next = 0;
  for (auto& [raw, dense] : vocab) dense = next++;
}

}  // namespace

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kQuery: return "query";
    case Split::kGallery: return "gallery";
  }
  return "?";
}

Split parse_split(std::string_view token) {
  if (token == "train") return Split::kTrain;
  if (token == "query") return Split::kQuery;
  if (token == "gallery") return Split::kGallery;
  throw ParseError("unknown split `" + std::string(token) + "` (expected train, query or gallery)");
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(i);
  }
  return out;
}

int DatasetManifest::train_label(const Sample& sample) const {
  auto it = id_vocab.find(sample.vehicle_id);
  if (it == id_vocab.end()) {
    throw ValueError("vehicle id " + std::to_string(sample.vehicle_id) + " has no training label");
  }
  return it->second;
}

std::optional<int> DatasetManifest::attribute_label(const Sample& sample,
                                                    std::string_view attribute) const {
  const std::optional<int>* raw = nullptr;
  const std::map<int, int>* vocab = nullptr;
  if (attribute == "color") {
    raw = &sample.color_id;
    vocab = &color_vocab;
  } else if (attribute == "type") {
    raw = &sample.type_id;
    vocab = &type_vocab;
  } else {
    throw ConfigError("unknown attribute `" + std::string(attribute) + "` (expected color or type)");
  }
  if (!raw->has_value()) return std::nullopt;
  return vocab->at(**raw);
}

std::size_t DatasetManifest::attribute_classes(std::string_view attribute) const {
  if (attribute == "color") return color_vocab.size();
  if (attribute == "type") return type_vocab.size();
  throw ConfigError("unknown attribute `" + std::string(attribute) + "` (expected color or type)");
}

std::filesystem::path DatasetManifest::image_file(const Sample& sample) const {
  std::filesystem::path p(sample.image_path);
  return p.is_absolute() ? p : root / p;
}

void DatasetManifest::build_vocabularies() {
  id_vocab.clear();
  color_vocab.clear();
  type_vocab.clear();
  for (const Sample& s : samples) {
    if (s.split == Split::kTrain) id_vocab.emplace(s.vehicle_id, 0);
    if (s.color_id) color_vocab.emplace(*s.color_id, 0);
    if (s.type_id) type_vocab.emplace(*s.type_id, 0);
  }
  build_vocab(id_vocab);
  build_vocab(color_vocab);
  build_vocab(type_vocab);
  // Dense relabeling must cover exactly 0..n-1.
  int expect = 0;
  for (const auto& [raw, dense] : id_vocab) {
    if (dense != expect++) throw StateError("training id relabeling is not dense");
  }
}

DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& root,
                               const std::string& source) {
  DatasetManifest manifest;
  manifest.root = root;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (!header_seen) {
      if (trim(line) != kManifestHeader) {
        throw ParseError(where + ": expected header `" + std::string(kManifestHeader) + "`");
      }
      header_seen = true;
      continue;
    }
    std::vector<std::string> fields = split(line, ',');
    if (fields.size() != 6) {
      throw ParseError(where + ": expected 6 fields, found " + std::to_string(fields.size()));
    }
    for (auto& f : fields) f = trim(f);
    Sample s;
    if (fields[0].empty()) throw ParseError(where + ": empty image path");
    s.image_path = fields[0];
    s.vehicle_id = parse_label(fields[1], where, "id");
    s.color_id = parse_optional_label(fields[2], where, "color");
    s.type_id = parse_optional_label(fields[3], where, "type");
    s.camera_id = parse_optional_label(fields[4], where, "camera");
    try {
      s.split = parse_split(fields[5]);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    manifest.samples.push_back(std::move(s));
  }
  if (!header_seen) throw ParseError(source + ": empty manifest");
  manifest.build_vocabularies();
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  DatasetManifest manifest = parse_manifest(buffer.str(), path.parent_path(), path.string());
  bool first = true;
  for (const Sample& s : manifest.samples) {
    const auto file = manifest.image_file(s);
    if (!std::filesystem::is_regular_file(file)) {
      throw IoError(path.string() + ": image " + file.string() + " does not exist");
    }
    const ImageHeader header = read_ppm_header(file);
    if (first) {
      manifest.image_dims = header;
      first = false;
    } else if (header.height != manifest.image_dims.height ||
               header.width != manifest.image_dims.width ||
               header.channels != manifest.image_dims.channels) {
      throw ValueError(path.string() + ": image " + file.string() + " differs in size from the first image");
    }
  }
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  auto opt = [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string(); };
  out << kManifestHeader << '\n';
  for (const Sample& s : manifest.samples) {
    out << s.image_path << ',' << s.vehicle_id << ',' << opt(s.color_id) << ',' << opt(s.type_id)
        << ',' << opt(s.camera_id) << ',' << split_name(s.split) << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

ResizeMode parse_resize_mode(std::string_view name) {
  if (name == "nearest") return ResizeMode::kNearest;
  if (name == "bilinear") return ResizeMode::kBilinear;
  throw ConfigError("unknown resize mode `" + std::string(name) + "` (expected nearest or bilinear)");
}

Image resize_image(const Image& image, std::size_t height, std::size_t width, ResizeMode mode) {
  if (height == 0 || width == 0) throw ValueError("resize target must be non-empty");
  if (image.height == height && image.width == width) return image;
  Image out;
  out.channels = image.channels;
  out.height = height;
  out.width = width;
  out.pixels.resize(image.channels * height * width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) {
        double value = 0.0;
        if (mode == ResizeMode::kNearest) {
          const std::size_t iy = std::min(image.height - 1, y * image.height / height);
          const std::size_t ix = std::min(image.width - 1, x * image.width / width);
          value = image.at(iy, ix, c);
        } else {
          // Pixel centers aligned; edges clamped.
          const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                       static_cast<double>(image.height - 1));
          const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                       static_cast<double>(image.width - 1));
          const auto y0 = static_cast<std::size_t>(fy);
          const auto x0 = static_cast<std::size_t>(fx);
          const std::size_t y1 = std::min(y0 + 1, image.height - 1);
          const std::size_t x1 = std::min(x0 + 1, image.width - 1);
          const double wy = fy - static_cast<double>(y0);
          const double wx = fx - static_cast<double>(x0);
          value = (1 - wy) * ((1 - wx) * image.at(y0, x0, c) + wx * image.at(y0, x1, c)) +
                  wy * ((1 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c));
        }
        out.pixels[(y * width + x) * image.channels + c] =
            static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 255.0)));
      }
    }
  }
  return out;
}

std::vector<double> image_to_chw(const Image& image, std::size_t channels, std::size_t height,
                                 std::size_t width, ResizeMode mode) {
  if (image.channels != channels && !(image.channels == 1 && channels == 3)) {
    throw ShapeError("image has " + std::to_string(image.channels) + " channels, model expects " +
                     std::to_string(channels));
  }
  const Image resized = resize_image(image, height, width, mode);
  std::vector<double> out(channels * height * width);
  for (std::size_t c = 0; c < channels; ++c) {
    const std::size_t src_c = resized.channels == 1 ? 0 : c;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        out[(c * height + y) * width + x] = resized.at(y, x, src_c) / 127.5 - 1.0;
      }
    }
  }
  return out;
}

Dataset Dataset::from_images(DatasetManifest manifest, const std::vector<Image>& images,
                             std::size_t channels, std::size_t height, std::size_t width,
                             ResizeMode mode) {
  if (images.size() != manifest.samples.size()) {
    throw ValueError("dataset has " + std::to_string(manifest.samples.size()) + " samples but " +
                     std::to_string(images.size()) + " images");
  }
  Dataset ds;
  ds.manifest_ = std::move(manifest);
  ds.channels_ = channels;
  ds.height_ = height;
  ds.width_ = width;
  const std::size_t per = channels * height * width;
  ds.pixels_.reserve(per * images.size());
  for (const Image& img : images) {
    auto chw = image_to_chw(img, channels, height, width, mode);
    ds.pixels_.insert(ds.pixels_.end(), chw.begin(), chw.end());
  }
  return ds;
}

Dataset Dataset::load(DatasetManifest manifest, std::size_t channels, std::size_t height,
                      std::size_t width, ResizeMode mode) {
  std::vector<Image> images;
  images.reserve(manifest.samples.size());
  for (const Sample& s : manifest.samples) images.push_back(read_ppm(manifest.image_file(s)));
  return from_images(std::move(manifest), images, channels, height, width, mode);
}

std::span<const double> Dataset::pixels(std::size_t sample) const {
  const std::size_t per = channels_ * height_ * width_;
  if (sample >= manifest_.samples.size()) throw ValueError("sample index out of range");
  return {pixels_.data() + sample * per, per};
}

Tensor Dataset::images(std::span<const std::size_t> samples) const {
  if (samples.empty()) throw ValueError("empty batch");
  std::vector<double> data;
  data.reserve(samples.size() * channels_ * height_ * width_);
  for (std::size_t s : samples) {
    auto px = pixels(s);
    data.insert(data.end(), px.begin(), px.end());
  }
  return Tensor::from_data({samples.size(), channels_, height_, width_}, std::move(data));
}

Batch Dataset::batch(std::span<const std::size_t> samples) const {
  Batch b;
  b.images = images(samples);
  b.samples.assign(samples.begin(), samples.end());
  std::vector<int> color, type;
  for (std::size_t s : samples) {
    const Sample& sample = manifest_.samples[s];
    auto it = manifest_.id_vocab.find(sample.vehicle_id);
    b.ids.push_back(sample.split == Split::kTrain && it != manifest_.id_vocab.end() ? it->second
                                                                                    : -1);
    color.push_back(manifest_.attribute_label(sample, "color").value_or(-1));
    type.push_back(manifest_.attribute_label(sample, "type").value_or(-1));
  }
  b.attributes.emplace("color", std::move(color));
  b.attributes.emplace("type", std::move(type));
  return b;
}

std::vector<std::vector<std::size_t>> make_batches(const DatasetManifest& manifest,
                                                   std::size_t batch_size, std::uint64_t seed,
                                                   int epoch) {
  const std::vector<std::size_t> train = manifest.indices(Split::kTrain);
  if (train.empty()) throw ValueError("the training split is empty");
  if (batch_size == 0) throw ValueError("batch size must be positive");
  if (batch_size > train.size()) {
    throw ValueError("batch size " + std::to_string(batch_size) + " exceeds the " +
                     std::to_string(train.size()) + " training samples");
  }
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
  const std::vector<std::size_t> order = rng.permutation(train.size());
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    std::vector<std::size_t> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(train[order[i]]);
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace ramreid
