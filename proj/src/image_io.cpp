// SPDX-License-Identifier: Apache-2.0
#include "bdmae/image_io.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>

#include "bdmae/wire.hpp"

namespace bdmae {

namespace {

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading '" + path.string() + "'");
  return bytes;
}

// Netpbm header tokens: whitespace separated, '#' starts a comment to end of line.
class HeaderReader {
 public:
  HeaderReader(std::string_view bytes, const std::filesystem::path& path)
      : bytes_(bytes), path_(path) {}

  std::string_view token() {
    for (;;) {
      while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
        ++pos_;
      }
      if (pos_ < bytes_.size() && bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
        continue;
      }
      break;
    }
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      ++pos_;
    }
    if (start == pos_) fail("truncated header");
    return bytes_.substr(start, pos_ - start);
  }

  int number(int lo, int hi, const char* what) {
    const std::string_view t = token();
    long value = 0;
    for (char ch : t) {
      if (!std::isdigit(static_cast<unsigned char>(ch))) fail(std::string("non-numeric ") + what);
      value = value * 10 + (ch - '0');
      if (value > hi) fail(std::string(what) + " out of range");
    }
    if (value < lo) fail(std::string(what) + " out of range");
    return static_cast<int>(value);
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      fail("missing separator before raster");
    }
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw FormatError("'" + path_.string() + "' is not a valid PPM: " + why);
  }

 private:
  std::string_view bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

std::string header(const char* magic, int width, int height, int maxval) {
  return std::string(magic) + "\n" + std::to_string(width) + " " + std::to_string(height) +
         "\n" + std::to_string(maxval) + "\n";
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  const std::string bytes = read_all(path);
  HeaderReader reader(bytes, path);
  if (reader.token() != "P6") reader.fail("magic is not P6");
  constexpr int kMaxSide = 1 << 15;
  const int width = reader.number(1, kMaxSide, "width");
  const int height = reader.number(1, kMaxSide, "height");
  const int maxval = reader.number(1, 65535, "maxval");
  const std::size_t start = reader.raster_start();
  const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
  const std::size_t samples = static_cast<std::size_t>(width) * height * 3;
  if (bytes.size() - start < samples * sample_bytes) reader.fail("truncated raster");

  Image image(height, width);
  const auto* raster = reinterpret_cast<const unsigned char*>(bytes.data() + start);
  for (std::size_t i = 0; i < samples; ++i) {
    const int v = sample_bytes == 1 ? raster[i] : (raster[2 * i] << 8) | raster[2 * i + 1];
    if (v > maxval) reader.fail("sample exceeds maxval");
    image.data()[i] = static_cast<double>(v) / maxval;
  }
  return image;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::string out = header("P6", image.width(), image.height(), 255);
  const auto bytes = wire::quantize(image);
  out.append(bytes.begin(), bytes.end());
  write_file_atomic(path, out);
}

void write_pgm16(const std::filesystem::path& path, const Grid& grid) {
  std::string out = header("P5", grid.width(), grid.height(), 65535);
  for (double v : grid.data()) {
    const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
    out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xff));
  }
  write_file_atomic(path, out);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  static std::atomic<unsigned> counter{0};
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw IoError("error writing '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    std::filesystem::remove(tmp, ignored);
    throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " +
                  ec.message());
  }
}

}  // namespace bdmae
