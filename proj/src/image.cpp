#include "transfer/image.hpp"

#include <cctype>
#include <fstream>
#include <string>

#include "transfer/errors.hpp"

namespace transfer {
namespace {

void write_netpbm(const std::filesystem::path& path, const Raster& image, std::size_t channels,
                  const char* magic) {
  if (image.channels != channels || image.pixels.size() != image.width * image.height * channels)
    throw DimensionError("netpbm: raster does not match " + std::string(magic) + " layout");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << magic << '\n' << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!os) throw DataError("write failed: " + path.string());
}

// Next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& is, const std::filesystem::path& path) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw DataError("truncated netpbm header: " + path.string());
  return tok;
}

std::size_t header_number(std::istream& is, const std::filesystem::path& path) {
  const std::string tok = header_token(is, path);
  try {
    std::size_t used = 0;
    const unsigned long v = std::stoul(tok, &used);
    if (used == tok.size()) return v;
  } catch (const std::exception&) {
  }
  throw DataError("bad netpbm header field '" + tok + "' in " + path.string());
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Raster& image) { write_netpbm(path, image, 3, "P6"); }

void write_pgm(const std::filesystem::path& path, const Raster& image) { write_netpbm(path, image, 1, "P5"); }

Raster read_netpbm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  const std::string magic = header_token(is, path);
  Raster r;
  if (magic == "P6") {
    r.channels = 3;
  } else if (magic == "P5") {
    r.channels = 1;
  } else {
    throw DataError("not a binary PPM/PGM file: " + path.string());
  }
  r.width = header_number(is, path);
  r.height = header_number(is, path);
  if (header_number(is, path) != 255) throw DataError("only maxval 255 is supported: " + path.string());
  r.pixels.resize(r.width * r.height * r.channels);
  is.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
  if (static_cast<std::size_t>(is.gcount()) != r.pixels.size()) throw DataError("truncated pixel data: " + path.string());
  return r;
}

Raster to_raster(const Tensor& image) {
  if (image.rank() != 3) throw DimensionError("to_raster: expected h x w x c, got " + shape_string(image.shape()));
  Raster r{image.dim(1), image.dim(0), image.dim(2), {}};
  r.pixels.reserve(image.numel());
  for (double v : image.data()) r.pixels.push_back(static_cast<std::uint8_t>(quantize_unit(v) * 255.0 + 0.5));
  return r;
}

Tensor from_raster(const Raster& image) {
  std::vector<double> v;
  v.reserve(image.pixels.size());
  for (std::uint8_t p : image.pixels) v.push_back(p / 255.0);
  return Tensor({image.height, image.width, image.channels}, std::move(v));
}

}  // namespace transfer
