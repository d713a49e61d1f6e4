#include "omni/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace omni {

void write_ppm(const std::string& path, const std::vector<double>& rgb, int w, int h) {
  OMNI_CHECK(rgb.size() == size_t(w) * h * 3, "write_ppm: size mismatch");
  std::ofstream f(path, std::ios::binary);
  OMNI_CHECK(f.good(), "write_ppm: cannot open " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  std::string buf(rgb.size(), '\0');
  for (size_t i = 0; i < rgb.size(); ++i) {
    double v = std::clamp(rgb[i], 0.0, 1.0);
    buf[i] = char(uint8_t(std::lround(v * 255.0)));
  }
  f.write(buf.data(), std::streamsize(buf.size()));
  OMNI_CHECK(f.good(), "write_ppm: write failed for " + path);
}

std::vector<double> read_ppm(const std::string& path, int& w, int& h) {
  std::ifstream f(path, std::ios::binary);
  OMNI_CHECK(f.good(), "read_ppm: cannot open " + path);
  std::string magic;
  int maxval = 0;
  f >> magic >> w >> h >> maxval;
  OMNI_CHECK(magic == "P6" && maxval == 255 && w > 0 && h > 0, "read_ppm: bad header in " + path);
  f.get();  // single whitespace after maxval
  std::vector<char> buf(size_t(w) * h * 3);
  f.read(buf.data(), std::streamsize(buf.size()));
  OMNI_CHECK(f.good(), "read_ppm: truncated " + path);
  std::vector<double> out(buf.size());
  for (size_t i = 0; i < buf.size(); ++i) out[i] = double(uint8_t(buf[i])) / 255.0;
  return out;
}

void write_pfm(const std::string& path, const std::vector<double>& depth, int w, int h) {
  OMNI_CHECK(depth.size() == size_t(w) * h, "write_pfm: size mismatch");
  std::ofstream f(path, std::ios::binary);
  OMNI_CHECK(f.good(), "write_pfm: cannot open " + path);
  f << "Pf\n" << w << " " << h << "\n-1.0\n";  // negative scale = little-endian
  std::vector<float> row;
  row.resize(size_t(w));
  for (int y = h - 1; y >= 0; --y) {  // PFM is bottom-up
    for (int x = 0; x < w; ++x) row[size_t(x)] = float(depth[size_t(y) * w + x]);
    f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size() * 4));
  }
  OMNI_CHECK(f.good(), "write_pfm: write failed for " + path);
}

std::vector<double> read_pfm(const std::string& path, int& w, int& h) {
  std::ifstream f(path, std::ios::binary);
  OMNI_CHECK(f.good(), "read_pfm: cannot open " + path);
  std::string magic;
  double scale = 0;
  f >> magic >> w >> h >> scale;
  OMNI_CHECK(magic == "Pf" && scale < 0 && w > 0 && h > 0, "read_pfm: bad header in " + path);
  f.get();
  std::vector<double> out(size_t(w) * h);
  std::vector<float> row;
  row.resize(size_t(w));
  for (int y = h - 1; y >= 0; --y) {
    f.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size() * 4));
    for (int x = 0; x < w; ++x) out[size_t(y) * w + x] = double(row[size_t(x)]);
  }
  OMNI_CHECK(f.good(), "read_pfm: truncated " + path);
  return out;
}

}  // namespace omni
