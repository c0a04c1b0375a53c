// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Minimal RGB image buffer with a zlib-backed PNG encoder and a small line
// plot renderer (5x7 bitmap glyphs: digits, '.', '-', '+', 'e', 'i', 'n', 'f').

#include <string>
#include <vector>

namespace exsep {

struct Rgb {
  unsigned char r = 0, g = 0, b = 0;
};

class Image {
 public:
  Image(int width, int height, Rgb fill = {255, 255, 255});
  int width() const { return width_; }
  int height() const { return height_; }
  void set(int x, int y, Rgb c);
  void line(int x0, int y0, int x1, int y1, Rgb c);
  void rect(int x0, int y0, int x1, int y1, Rgb c);
  // Returns the advance width; unknown glyphs render as blanks.
  int text(int x, int y, const std::string& s, Rgb c);
  const std::vector<unsigned char>& pixels() const { return rgb_; }

 private:
  int width_, height_;
  std::vector<unsigned char> rgb_;
};

void write_png(const std::string& path, const Image& img);

struct PlotSeries {
  std::vector<double> x;
  std::vector<double> y;
  Rgb color;
  std::string label;
};

void render_line_plot(const std::string& path,
                      const std::vector<PlotSeries>& series, int width = 640,
                      int height = 480);

}  // namespace exsep
