#include "ramreid/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <set>

#include "ramreid/error.hpp"
#include "ramreid/rng.hpp"

namespace ramreid {

namespace {

// Stream ids for mix_seed; kept apart so adding images never shifts templates.
constexpr std::uint64_t kTemplateStream = 0x100;
constexpr std::uint64_t kColorStream = 0x200;
constexpr std::uint64_t kIdentityStream = 0x300;
constexpr std::uint64_t kNoiseStream = 0x10000;

CueRegion parse_cue_region(std::string_view name) {
  if (name == "top") return CueRegion::kTop;
  if (name == "middle") return CueRegion::kMiddle;
  if (name == "bottom") return CueRegion::kBottom;
  throw ConfigError("unknown cue region `" + std::string(name) + "` (expected top, middle, bottom or cycle)");
}

// Grey-level layout shared by every identity of one type: a body block on a
// darker background with a few type-specific rectangles.
std::vector<double> make_template(const SyntheticSpec& spec, std::size_t type) {
  Rng rng(mix_seed(spec.seed, kTemplateStream + type));
  const std::size_t h = spec.height, w = spec.width;
  std::vector<double> t(h * w, 0.25);
  const std::size_t top = h / 10, left = w / 10;
  for (std::size_t y = top; y < h - top; ++y) {
    for (std::size_t x = left; x < w - left; ++x) t[y * w + x] = 0.55;
  }
  for (int r = 0; r < 4; ++r) {
    const std::size_t rh = 2 + rng.index(h / 3);
    const std::size_t rw = 2 + rng.index(w / 2);
    const std::size_t y0 = rng.index(h - rh + 1);
    const std::size_t x0 = rng.index(w - rw + 1);
    const double level = rng.uniform(0.2, 0.8);
    for (std::size_t y = y0; y < y0 + rh; ++y) {
      for (std::size_t x = x0; x < x0 + rw; ++x) t[y * w + x] = level;
    }
  }
  return t;
}

std::array<double, 3> make_tint(const SyntheticSpec& spec, std::size_t color) {
  Rng rng(mix_seed(spec.seed, kColorStream + color));
  return {rng.uniform(0.45, 1.0), rng.uniform(0.45, 1.0), rng.uniform(0.45, 1.0)};
}

}  // namespace

std::string_view cue_region_name(CueRegion region) {
  switch (region) {
    case CueRegion::kTop: return "top";
    case CueRegion::kMiddle: return "middle";
    case CueRegion::kBottom: return "bottom";
  }
  return "?";
}

void SyntheticSpec::validate() const {
  if (num_ids == 0) throw ConfigError("synthetic.num_ids must be positive");
  if (images_per_id == 0) throw ConfigError("synthetic.images_per_id must be positive");
  if (height < 3 || width < 1) throw ConfigError("synthetic images must be at least 3 rows high");
  if (num_colors == 0 || num_types == 0) throw ConfigError("synthetic.num_colors and num_types must be positive");
  if (patch_h == 0 || patch_w == 0) throw ConfigError("synthetic patch must be non-empty");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("synthetic.noise_std must be >= 0");
  if (test_ids > num_ids) throw ConfigError("synthetic.test_ids exceeds synthetic.num_ids");
  if (test_ids > 0 && queries_per_id >= images_per_id) {
    throw ConfigError("synthetic.queries_per_id must leave at least one gallery image per id");
  }
  if (!cue_regions.empty() && cue_regions.size() != 1 && cue_regions.size() != num_ids) {
    throw ConfigError("synthetic cue regions need 1 or num_ids entries");
  }
  for (CueRegion r : {CueRegion::kTop, CueRegion::kMiddle, CueRegion::kBottom}) {
    auto [b, e] = band_rows(r);
    if (e - b < patch_h) {
      throw ConfigError("synthetic " + std::string(cue_region_name(r)) + " band has " +
                        std::to_string(e - b) + " rows, too small for a " + std::to_string(patch_h) +
                        "-row patch");
    }
  }
  if (patch_w > width) throw ConfigError("synthetic patch is wider than the image");
}

CueRegion SyntheticSpec::cue_region(std::size_t id) const {
  if (cue_regions.empty()) return static_cast<CueRegion>(id % 3);
  return cue_regions.size() == 1 ? cue_regions[0] : cue_regions.at(id);
}

std::pair<std::size_t, std::size_t> SyntheticSpec::band_rows(CueRegion region) const {
  const auto b = static_cast<std::size_t>(region);
  return {b * height / 3, (b + 1) * height / 3};
}

SyntheticSpec SyntheticSpec::from_config(const KeyValueConfig& config) {
  SyntheticSpec s;
  s.num_ids = config.get_size("synthetic.num_ids");
  s.images_per_id = config.get_size("synthetic.images_per_id");
  s.height = config.get_size("synthetic.height");
  s.width = config.get_size("synthetic.width");
  s.num_colors = config.get_size("synthetic.num_colors");
  s.num_types = config.get_size("synthetic.num_types");
  const std::string cue = config.get_string("synthetic.cue_region");
  if (cue != "cycle") {
    for (const std::string& part : config.get_list("synthetic.cue_region")) {
      s.cue_regions.push_back(parse_cue_region(part));
    }
  }
  s.patch_h = config.get_size("synthetic.patch_h");
  s.patch_w = config.get_size("synthetic.patch_w");
  s.noise_std = config.get_double("synthetic.noise_std");
  s.test_ids = config.get_size("synthetic.test_ids");
  s.queries_per_id = config.get_size("synthetic.queries_per_id");
  s.seed = static_cast<std::uint64_t>(config.get_int("synthetic.seed"));
  s.validate();
  return s;
}

KeyValueConfig SyntheticSpec::to_config() const {
  KeyValueConfig c;
  c.set("synthetic.num_ids", std::to_string(num_ids));
  c.set("synthetic.images_per_id", std::to_string(images_per_id));
  c.set("synthetic.height", std::to_string(height));
  c.set("synthetic.width", std::to_string(width));
  c.set("synthetic.num_colors", std::to_string(num_colors));
  c.set("synthetic.num_types", std::to_string(num_types));
  std::string cue = "cycle";
  if (!cue_regions.empty()) {
    cue.clear();
    for (std::size_t i = 0; i < cue_regions.size(); ++i) {
      if (i) cue += ',';
      cue += cue_region_name(cue_regions[i]);
    }
  }
  c.set("synthetic.cue_region", cue);
  c.set("synthetic.patch_h", std::to_string(patch_h));
  c.set("synthetic.patch_w", std::to_string(patch_w));
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", noise_std);
  c.set("synthetic.noise_std", buf);
  c.set("synthetic.test_ids", std::to_string(test_ids));
  c.set("synthetic.queries_per_id", std::to_string(queries_per_id));
  c.set("synthetic.seed", std::to_string(seed));
  return c;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticDataset out;
  out.spec = spec;
  const std::size_t h = spec.height, w = spec.width;

  std::vector<std::vector<double>> templates;
  for (std::size_t t = 0; t < spec.num_types; ++t) templates.push_back(make_template(spec, t));
  std::vector<std::array<double, 3>> tints;
  for (std::size_t c = 0; c < spec.num_colors; ++c) tints.push_back(make_tint(spec, c));

  std::set<std::vector<std::uint8_t>> used_patterns;
  for (std::size_t id = 0; id < spec.num_ids; ++id) {
    Rng rng(mix_seed(spec.seed, kIdentityStream + id));
    SyntheticIdentity ident;
    ident.type = rng.index(spec.num_types);
    ident.color = rng.index(spec.num_colors);
    ident.cue = spec.cue_region(id);
    auto [band_begin, band_end] = spec.band_rows(ident.cue);
    ident.patch_y = band_begin + rng.index(band_end - band_begin - spec.patch_h + 1);
    ident.patch_x = rng.index(w - spec.patch_w + 1);
    // Redraw on the (unlikely) event of a repeated pattern.
    do {
      ident.pattern.assign(spec.patch_h * spec.patch_w, 0);
      for (auto& bit : ident.pattern) bit = static_cast<std::uint8_t>(rng.next_u64() >> 63);
    } while (!used_patterns.insert(ident.pattern).second);
    out.identities.push_back(std::move(ident));
  }

  const std::size_t first_test = spec.num_ids - spec.test_ids;
  for (std::size_t id = 0; id < spec.num_ids; ++id) {
    const SyntheticIdentity& ident = out.identities[id];
    const auto& tmpl = templates[ident.type];
    const auto& tint = tints[ident.color];
    for (std::size_t k = 0; k < spec.images_per_id; ++k) {
      Rng noise(mix_seed(spec.seed, kNoiseStream + id * spec.images_per_id + k));
      Image img;
      img.channels = 3;
      img.height = h;
      img.width = w;
      img.pixels.resize(3 * h * w);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          double mark = 0.0;
          if (y >= ident.patch_y && y < ident.patch_y + spec.patch_h && x >= ident.patch_x &&
              x < ident.patch_x + spec.patch_w) {
            const bool on = ident.pattern[(y - ident.patch_y) * spec.patch_w + (x - ident.patch_x)];
            mark = on ? spec.patch_amplitude : -spec.patch_amplitude;
          }
          for (std::size_t c = 0; c < 3; ++c) {
            double v = tint[c] * tmpl[y * w + x] + mark;
            if (spec.noise_std > 0.0) v += spec.noise_std * noise.normal();
            v = std::clamp(v, 0.0, 1.0);
            img.pixels[(y * w + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
          }
        }
      }
      out.images.push_back(std::move(img));

      Sample s;
      char name[64];
      std::snprintf(name, sizeof name, "images/id%03zu_%03zu.ppm", id, k);
      s.image_path = name;
      s.vehicle_id = static_cast<int>(id);
      s.color_id = static_cast<int>(ident.color);
      s.type_id = static_cast<int>(ident.type);
      if (id < first_test) {
        s.split = Split::kTrain;
      } else {
        s.split = k < spec.queries_per_id ? Split::kQuery : Split::kGallery;
      }
      out.manifest.samples.push_back(std::move(s));
    }
  }
  out.manifest.image_dims = {3, h, w};
  out.manifest.build_vocabularies();
  return out;
}

void write_synthetic(const SyntheticDataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    write_ppm(dir / dataset.manifest.samples[i].image_path, dataset.images[i]);
  }
  write_manifest(dir / "manifest.csv", dataset.manifest);
  dataset.spec.to_config().save(dir / "spec.txt");
}

}  // namespace ramreid
