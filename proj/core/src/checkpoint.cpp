#include "ramreid/checkpoint.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "ramreid/config.hpp"
#include "ramreid/error.hpp"
#include "ramreid/serialize.hpp"

namespace ramreid {

namespace {

std::string format_shape(const Shape& shape) {
  if (shape.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

Shape parse_shape(const std::string& text) {
  if (text == "scalar") return {};
  Shape shape;
  for (const std::string& part : split(text, 'x')) {
    try {
      shape.push_back(static_cast<std::size_t>(std::stoull(part)));
    } catch (const std::logic_error&) {
      throw ParseError("bad shape `" + text + "` in checkpoint manifest");
    }
  }
  return shape;
}

}  // namespace

void save_tensor_dir(const std::filesystem::path& dir, std::span<const NamedTensor> tensors) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.txt").string());
  std::set<std::string> seen;
  for (const NamedTensor& t : tensors) {
    if (!seen.insert(t.name).second) throw ValueError("duplicate tensor name " + t.name);
    const std::string file = t.name + ".ramt";
    save_tensor(dir / file, t.tensor);
    manifest << t.name << ' ' << file << ' ' << format_shape(t.tensor.shape()) << '\n';
  }
  if (!manifest) throw IoError("failed writing checkpoint manifest in " + dir.string());
}

std::vector<NamedTensor> load_tensor_dir(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw IoError("missing checkpoint manifest in " + dir.string());
  std::vector<NamedTensor> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::istringstream fields(line);
    std::string name, file, shape_text;
    if (!(fields >> name >> file >> shape_text)) {
      throw ParseError((dir / "manifest.txt").string() + ":" + std::to_string(line_no) +
                       ": expected `name file shape`");
    }
    Tensor t = load_tensor(dir / file);
    if (t.shape() != parse_shape(shape_text)) {
      throw ParseError("tensor " + name + " has shape " + shape_to_string(t.shape()) +
                       " but the manifest says " + shape_text);
    }
    out.push_back({name, std::move(t)});
  }
  return out;
}

}  // namespace ramreid
