// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "exsep/png.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

#include "exsep/common.hpp"

namespace exsep {

Image::Image(int width, int height, Rgb fill) : width_(width), height_(height) {
  rgb_.resize(static_cast<size_t>(width) * height * 3);
  for (long i = 0; i < static_cast<long>(width) * height; ++i) {
    rgb_[static_cast<size_t>(i) * 3 + 0] = fill.r;
    rgb_[static_cast<size_t>(i) * 3 + 1] = fill.g;
    rgb_[static_cast<size_t>(i) * 3 + 2] = fill.b;
  }
}

void Image::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  const size_t i = (static_cast<size_t>(y) * width_ + static_cast<size_t>(x)) * 3;
  rgb_[i] = c.r;
  rgb_[i + 1] = c.g;
  rgb_[i + 2] = c.b;
}

void Image::line(int x0, int y0, int x1, int y1, Rgb c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Image::rect(int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
}

namespace {

// 5x7 glyphs, one byte per row, low 5 bits used
const std::map<char, std::array<unsigned char, 7>>& font() {
  static const std::map<char, std::array<unsigned char, 7>> glyphs = {
      {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
      {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
      {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
      {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
      {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
      {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
      {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
      {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
      {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
      {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
      {'+', {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00}},
      {'e', {0x00, 0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e}},
      {'i', {0x04, 0x00, 0x0c, 0x04, 0x04, 0x04, 0x0e}},
      {'n', {0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11}},
      {'f', {0x06, 0x09, 0x08, 0x1c, 0x08, 0x08, 0x08}},
  };
  return glyphs;
}

}  // namespace

int Image::text(int x, int y, const std::string& s, Rgb c) {
  int at = x;
  for (char ch : s) {
    auto it = font().find(ch);
    if (it != font().end()) {
      for (int row = 0; row < 7; ++row)
        for (int col = 0; col < 5; ++col)
          if (it->second[static_cast<size_t>(row)] & (1 << (4 - col)))
            set(at + col, y + row, c);
    }
    at += 6;
  }
  return at - x;
}

namespace {

void put_be32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

void write_chunk(std::ofstream& os, const char type[4], const std::string& data) {
  std::string head;
  put_be32(head, static_cast<uint32_t>(data.size()));
  os.write(head.data(), 4);
  os.write(type, 4);
  os.write(data.data(), static_cast<std::streamsize>(data.size()));
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data()),
              static_cast<uInt>(data.size()));
  std::string tail;
  put_be32(tail, static_cast<uint32_t>(crc));
  os.write(tail.data(), 4);
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("png: cannot open for writing: " + path);
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::string ihdr;
  put_be32(ihdr, static_cast<uint32_t>(img.width()));
  put_be32(ihdr, static_cast<uint32_t>(img.height()));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // no interlace
  write_chunk(os, "IHDR", ihdr);

  // filter byte 0 per scanline
  const size_t stride = static_cast<size_t>(img.width()) * 3;
  std::string raw;
  raw.reserve((stride + 1) * static_cast<size_t>(img.height()));
  for (int y = 0; y < img.height(); ++y) {
    raw.push_back(0);
    raw.append(reinterpret_cast<const char*>(img.pixels().data() +
                                             static_cast<size_t>(y) * stride),
               stride);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::string compressed(bound, '\0');
  if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &bound,
                reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw NumericError("png: deflate failed");
  compressed.resize(bound);
  write_chunk(os, "IDAT", compressed);
  write_chunk(os, "IEND", "");
  if (!os) throw DataError("png: write failed: " + path);
}

namespace {

std::string format_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

void render_line_plot(const std::string& path,
                      const std::vector<PlotSeries>& series, int width,
                      int height) {
  Image img(width, height);
  const int ml = 56, mr = 16, mt = 16, mb = 36;
  const int x0 = ml, x1 = width - mr, y0 = height - mb, y1 = mt;
  const Rgb black{0, 0, 0}, grey{210, 210, 210};

  double lo_x = 0.0, hi_x = 1.0, lo_y = 0.0, hi_y = 1.0;
  bool any = false;
  for (const PlotSeries& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!any) {
        lo_x = hi_x = s.x[i];
        lo_y = hi_y = s.y[i];
        any = true;
      }
      lo_x = std::min(lo_x, s.x[i]);
      hi_x = std::max(hi_x, s.x[i]);
      lo_y = std::min(lo_y, s.y[i]);
      hi_y = std::max(hi_y, s.y[i]);
    }
  if (hi_x - lo_x < 1e-12) {
    lo_x -= 0.5;
    hi_x += 0.5;
  }
  if (hi_y - lo_y < 1e-12) {
    lo_y -= 0.5;
    hi_y += 0.5;
  }
  // pad the y range a little
  const double pad = 0.06 * (hi_y - lo_y);
  lo_y -= pad;
  hi_y += pad;

  auto px = [&](double x) {
    return x0 + static_cast<int>(std::lround((x - lo_x) / (hi_x - lo_x) * (x1 - x0)));
  };
  auto py = [&](double y) {
    return y0 - static_cast<int>(std::lround((y - lo_y) / (hi_y - lo_y) * (y0 - y1)));
  };

  const int n_ticks = 5;
  for (int i = 0; i <= n_ticks; ++i) {
    const double tx = lo_x + (hi_x - lo_x) * i / n_ticks;
    const double ty = lo_y + (hi_y - lo_y) * i / n_ticks;
    img.line(px(tx), y0, px(tx), y1, grey);
    img.line(x0, py(ty), x1, py(ty), grey);
    const std::string lx = format_tick(tx);
    img.text(px(tx) - static_cast<int>(lx.size()) * 3, y0 + 8, lx, black);
    const std::string ly = format_tick(ty);
    img.text(x0 - 8 - static_cast<int>(ly.size()) * 6, py(ty) - 3, ly, black);
  }
  img.line(x0, y0, x1, y0, black);
  img.line(x0, y0, x0, y1, black);

  int legend_y = y1 + 6;
  for (const PlotSeries& s : series) {
    for (size_t i = 0; i + 1 < s.x.size(); ++i)
      img.line(px(s.x[i]), py(s.y[i]), px(s.x[i + 1]), py(s.y[i + 1]), s.color);
    for (size_t i = 0; i < s.x.size(); ++i)
      img.rect(px(s.x[i]) - 2, py(s.y[i]) - 2, px(s.x[i]) + 2, py(s.y[i]) + 2,
               s.color);
    if (!s.label.empty()) {
      img.line(x1 - 70, legend_y + 3, x1 - 54, legend_y + 3, s.color);
      img.text(x1 - 50, legend_y, s.label, black);
      legend_y += 12;
    }
  }
  write_png(path, img);
}

}  // namespace exsep
