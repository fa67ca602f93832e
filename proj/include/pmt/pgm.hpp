#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pmt/common.hpp"

namespace pmt {

// Binary (P5) PGM with maxval 255, one byte per pixel, row-major.
void write_pgm(const std::string& path, Index width, Index height,
               const std::vector<std::uint8_t>& pixels);

std::vector<std::uint8_t> encode_pgm(Index width, Index height,
                                     const std::vector<std::uint8_t>& pixels);

}  // namespace pmt
