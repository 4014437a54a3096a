#include "fmamba/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace fmamba {
namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& is) {
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
  if (tok.empty()) throw IoError("truncated PNM header");
  return tok;
}

long header_int(std::istream& is, const char* what) {
  const std::string t = header_token(is);
  char* end = nullptr;
  const long v = std::strtol(t.c_str(), &end, 10);
  if (*end != '\0' || v <= 0) throw IoError(std::string("invalid PNM ") + what + ": " + t);
  return v;
}

}  // namespace

Tensor read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  const std::string magic = header_token(is);
  int channels;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw IoError(path + ": only binary P5/P6 images are supported");
  }
  const long W = header_int(is, "width");
  const long H = header_int(is, "height");
  const long maxval = header_int(is, "maxval");
  if (maxval > 65535) throw IoError(path + ": maxval above 65535");
  const int bytes = maxval > 255 ? 2 : 1;
  const std::size_t n = static_cast<std::size_t>(W * H * channels);
  std::vector<unsigned char> raw(n * static_cast<std::size_t>(bytes));
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw IoError(path + ": truncated pixel data");
  }
  std::vector<Real> data(n);
  const Real scale = 1.0 / static_cast<Real>(maxval);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned v = bytes == 2 ? (raw[2 * i] << 8) | raw[2 * i + 1] : raw[i];
    const std::size_t pix = i / static_cast<std::size_t>(channels);
    const std::size_t c = i % static_cast<std::size_t>(channels);
    data[c * static_cast<std::size_t>(W * H) + pix] = std::min<Real>(1.0, v * scale);
  }
  return Tensor({channels, H, W}, std::move(data));
}

void write_pnm(const std::string& path, const Tensor& img, int bits) {
  if (bits != 8 && bits != 16) throw ValidationError("PNM bit depth must be 8 or 16");
  std::int64_t channels = 1, H, W;
  if (img.rank() == 2) {
    H = img.dim(0);
    W = img.dim(1);
  } else {
    channels = 1;
    for (std::size_t i = 0; i + 3 < img.rank(); ++i) {
      if (img.shape()[i] != 1) throw ShapeError("write_pnm expects a single image, got " + shape_str(img.shape()));
    }
    if (img.rank() < 3) throw ShapeError("write_pnm: bad shape " + shape_str(img.shape()));
    channels = img.dim(-3);
    H = img.dim(-2);
    W = img.dim(-1);
  }
  if (channels != 1 && channels != 3) throw ShapeError("write_pnm supports 1 or 3 channels");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  const unsigned maxval = bits == 16 ? 65535u : 255u;
  os << (channels == 1 ? "P5" : "P6") << '\n' << W << ' ' << H << '\n' << maxval << '\n';
  const auto d = img.data();
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(W * H * channels * (bits / 8)));
  for (std::int64_t p = 0; p < W * H; ++p)
    for (std::int64_t c = 0; c < channels; ++c) {
      const Real v = std::clamp(d[static_cast<std::size_t>(c * W * H + p)], 0.0, 1.0);
      const auto q = static_cast<unsigned>(std::lround(v * maxval));
      if (bits == 16) raw.push_back(static_cast<unsigned char>(q >> 8));
      raw.push_back(static_cast<unsigned char>(q & 0xff));
    }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw IoError("failed writing " + path);
}

}  // namespace fmamba
