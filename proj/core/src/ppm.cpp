#include "ramreid/ppm.hpp"

#include <cctype>
#include <fstream>
#include <string>

#include "ramreid/error.hpp"

namespace ramreid {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in, const std::filesystem::path& path) {
  std::string token;
  int ch = in.get();
  while (in) {
    if (ch == '#') {
      while (in && ch != '\n') ch = in.get();
    } else if (std::isspace(ch)) {
      if (!token.empty()) return token;
    } else {
      token.push_back(static_cast<char>(ch));
    }
    ch = in.get();
  }
  if (token.empty()) throw ParseError("truncated PPM header in " + path.string());
  return token;
}

std::size_t header_number(std::istream& in, const std::filesystem::path& path) {
  const std::string token = next_token(in, path);
  try {
    std::size_t used = 0;
    const unsigned long v = std::stoul(token, &used);
    if (used != token.size() || v == 0) throw std::invalid_argument(token);
    return v;
  } catch (const std::logic_error&) {
    throw ParseError("bad PPM header value `" + token + "` in " + path.string());
  }
}

ImageHeader parse_header(std::istream& in, const std::filesystem::path& path) {
  const std::string magic = next_token(in, path);
  ImageHeader header;
  if (magic == "P6") {
    header.channels = 3;
  } else if (magic == "P5") {
    header.channels = 1;
  } else {
    throw ParseError(path.string() + " is not a binary PPM/PGM (magic `" + magic + "`)");
  }
  header.width = header_number(in, path);
  header.height = header_number(in, path);
  const std::size_t maxval = header_number(in, path);
  if (maxval != 255) throw ParseError(path.string() + ": only maxval 255 is supported");
  return header;
}

}  // namespace

ImageHeader read_ppm_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  return parse_header(in, path);
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  const ImageHeader header = parse_header(in, path);
  Image image;
  image.channels = header.channels;
  image.height = header.height;
  image.width = header.width;
  image.pixels.resize(header.channels * header.height * header.width);
  in.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!in) throw ParseError("truncated pixel data in " + path.string());
  return image;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw ValueError("PPM images need 1 or 3 channels");
  if (image.pixels.size() != image.channels * image.height * image.width) {
    throw ValueError("image pixel buffer does not match its dimensions");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image " + path.string());
  out << (image.channels == 3 ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("failed writing image " + path.string());
}

}  // namespace ramreid
