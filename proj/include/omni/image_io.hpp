#pragma once

#include <string>

#include "omni/common.hpp"

namespace omni {

// 8-bit binary PPM (P6). Values are clamped to [0,1] and rounded.
void write_ppm(const std::string& path, const std::vector<double>& rgb, int w, int h);
std::vector<double> read_ppm(const std::string& path, int& w, int& h);

// PFM grayscale depth: 32-bit float, little-endian (scale -1.0), top row first
// in our in-memory layout (PFM stores bottom-up; conversion handled here).
void write_pfm(const std::string& path, const std::vector<double>& depth, int w, int h);
std::vector<double> read_pfm(const std::string& path, int& w, int& h);

}  // namespace omni
