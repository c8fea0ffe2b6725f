#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "alpr/error.hpp"

namespace alpr {

// Row-major 8-bit raster, interleaved when it has 3 channels.
class ImageBuf {
 public:
  ImageBuf() = default;

  ImageBuf(int width, int height, int channels, std::uint8_t fill = 0)
      : width_(width), height_(height), channels_(channels) {
    check_shape();
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }

  ImageBuf(int width, int height, int channels, std::vector<std::uint8_t> data)
      : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
    check_shape();
    if (data_.size() != static_cast<std::size_t>(width) * height * channels) {
      throw Error(ErrorKind::ShapeMismatch, "image data length " + std::to_string(data_.size()) +
                                                " does not match " + std::to_string(width) + "x" +
                                                std::to_string(height) + "x" +
                                                std::to_string(channels));
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }

  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::span<std::uint8_t> data() noexcept { return data_; }

  std::uint8_t at(int x, int y, int c = 0) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  std::uint8_t& at(int x, int y, int c = 0) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  std::span<const std::uint8_t> row(int y) const {
    return std::span<const std::uint8_t>(data_).subspan(
        static_cast<std::size_t>(y) * width_ * channels_,
        static_cast<std::size_t>(width_) * channels_);
  }

  friend bool operator==(const ImageBuf&, const ImageBuf&) = default;

 private:
  void check_shape() const {
    if (width_ < 1 || height_ < 1) throw Error(ErrorKind::ShapeMismatch, "image dims must be >= 1");
    if (channels_ != 1 && channels_ != 3) {
      throw Error(ErrorKind::ChannelMismatch, "channels must be 1 or 3");
    }
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> data_;
};

// ---------------------------------------------------------------------------
// Binary PNM: P6 for 3 channels, P5 for 1 channel, maxval 255.

namespace detail {

inline int read_pnm_int(std::istream& in, const std::string& path) {
  int c = in.peek();
  while (c != EOF) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
    c = in.peek();
  }
  int v = -1;
  if (!(in >> v) || v < 0) throw Error(ErrorKind::MalformedLine, path + ": bad PNM header");
  return v;
}

}  // namespace detail

inline ImageBuf read_pnm(std::istream& in, const std::string& path = "<stream>") {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw Error(ErrorKind::MalformedLine, path + ": not a binary PGM/PPM file");
  }
  const int channels = magic[1] == '6' ? 3 : 1;
  const int width = detail::read_pnm_int(in, path);
  const int height = detail::read_pnm_int(in, path);
  const int maxval = detail::read_pnm_int(in, path);
  if (maxval != 255) throw Error(ErrorKind::MalformedLine, path + ": maxval must be 255");
  if (width < 1 || height < 1) throw Error(ErrorKind::MalformedLine, path + ": empty image");
  in.get();  // single whitespace before the raster
  std::vector<std::uint8_t> data(static_cast<std::size_t>(width) * height * channels);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (in.gcount() != static_cast<std::streamsize>(data.size())) {
    throw Error(ErrorKind::MalformedLine, path + ": truncated raster");
  }
  return ImageBuf(width, height, channels, std::move(data));
}

inline ImageBuf read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path);
  return read_pnm(in, path);
}

inline void write_pnm(std::ostream& out, const ImageBuf& img) {
  out << (img.channels() == 3 ? "P6" : "P5") << '\n'
      << img.width() << ' ' << img.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data().data()),
            static_cast<std::streamsize>(img.data().size()));
}

inline void write_pnm(const std::string& path, const ImageBuf& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path);
  write_pnm(out, img);
  out.flush();
  if (!out) throw Error(ErrorKind::IoFailure, "short write to " + path);
}

}  // namespace alpr
