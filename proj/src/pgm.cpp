#include "pmt/pgm.hpp"

#include <fstream>

namespace pmt {

std::vector<std::uint8_t> encode_pgm(Index width, Index height,
                                     const std::vector<std::uint8_t>& pixels) {
  if (width < 1 || height < 1 || pixels.size() != static_cast<std::size_t>(width * height))
    throw IoError("bad-pgm-size", std::to_string(width) + "x" + std::to_string(height) + " with " +
                                      std::to_string(pixels.size()) + " pixels");
  const std::string header =
      "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

void write_pgm(const std::string& path, Index width, Index height,
               const std::vector<std::uint8_t>& pixels) {
  const auto bytes = encode_pgm(width, height, pixels);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot-open-file", path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write-failed", path);
}

}  // namespace pmt
