#include <ralc/grid.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace ralc {

namespace {

unsigned char to_gray(CellState s) {
  switch (s) {
    case CellState::occupied: return 0;
    case CellState::free: return 255;
    case CellState::unknown: break;
  }
  return 127;
}

CellState from_gray(unsigned char g) {
  if (g < 64) return CellState::occupied;
  if (g > 191) return CellState::free;
  return CellState::unknown;
}

}  // namespace

std::string encode_pgm(const OccupancyMap& map) {
  char header[256];
  std::snprintf(header, sizeof header, "P5\n# origin %.17g %.17g resolution %.17g\n%d %d\n255\n", map.origin.x(),
                map.origin.y(), map.resolution, map.width, map.height);
  std::string out(header);
  out.reserve(out.size() + map.cells.size());
  for (int y = map.height - 1; y >= 0; --y)
    for (int x = 0; x < map.width; ++x) out.push_back(static_cast<char>(to_gray(map.at(x, y))));
  return out;
}

OccupancyMap decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  OccupancyMap map;
  bool have_origin = false;
  // Reads the next header token, collecting the origin comment on the way.
  auto token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        const std::size_t end = bytes.find('\n', pos);
        std::istringstream comment(bytes.substr(pos + 1, end - pos - 1));
        std::string key;
        double ox, oy, res;
        std::string res_key;
        if (comment >> key && key == "origin" && comment >> ox >> oy >> res_key >> res && res_key == "resolution") {
          map.origin = {ox, oy};
          map.resolution = res;
          have_origin = true;
        }
        pos = end == std::string::npos ? bytes.size() : end + 1;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P5") throw MapIoError("not a binary PGM");
  try {
    map.width = std::stoi(token());
    map.height = std::stoi(token());
    if (std::stoi(token()) != 255) throw MapIoError("unsupported PGM depth");
  } catch (const std::logic_error&) {
    throw MapIoError("malformed PGM header");
  }
  ++pos;  // single whitespace before the raster
  if (map.width <= 0 || map.height <= 0) throw MapIoError("empty PGM");
  if (bytes.size() - pos != static_cast<std::size_t>(map.width) * map.height) throw MapIoError("truncated PGM raster");
  if (!have_origin) map.origin.setZero();
  map.cells.assign(static_cast<std::size_t>(map.width) * map.height, CellState::unknown);
  for (int row = 0; row < map.height; ++row)
    for (int x = 0; x < map.width; ++x)
      map.at(x, map.height - 1 - row) = from_gray(static_cast<unsigned char>(bytes[pos + row * map.width + x]));
  return map;
}

void write_pgm(const OccupancyMap& map, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MapIoError("cannot write " + path);
  const std::string bytes = encode_pgm(map);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw MapIoError("cannot write " + path);
}

OccupancyMap read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MapIoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_pgm(ss.str());
}

}  // namespace ralc
