#include "emasam/sequence_io.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json_io.hpp"

namespace emasam {

namespace fs = std::filesystem;
using detail::json;

namespace {

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kFormatTag = "emasam-sequence";
constexpr int kFormatVersion = 1;

std::string numbered(const char* prefix, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04d.pgm", prefix, index);
  return buf;
}

// Reads one whitespace-delimited header integer, skipping '#' comments.
bool read_header_int(std::istream& in, int& out) {
  for (;;) {
    const int ch = in.peek();
    if (ch == EOF) return false;
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  in >> out;
  return static_cast<bool>(in);
}

}  // namespace

std::string frame_file_name(int index) { return numbered("frame", index); }
std::string mask_file_name(int index) { return numbered("mask", index); }

void write_pgm(const fs::path& path, const Grid<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << "P5\n" << bytes.width << ' ' << bytes.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data.data()),
            static_cast<std::streamsize>(bytes.data.size()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

Grid<std::uint8_t> read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '5')
    throw FormatError("'" + path.string() + "' is not a binary PGM (P5)");
  int width = 0, height = 0, maxval = 0;
  if (!read_header_int(in, width) || !read_header_int(in, height) ||
      !read_header_int(in, maxval))
    throw FormatError("'" + path.string() + "': malformed PGM header");
  if (width <= 0 || height <= 0 || maxval != 255)
    throw FormatError("'" + path.string() + "': unsupported PGM geometry or maxval");
  in.get();  // single whitespace byte before the raster
  Grid<std::uint8_t> g(height, width);
  in.read(reinterpret_cast<char*>(g.data.data()), static_cast<std::streamsize>(g.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(g.data.size()))
    throw FormatError("'" + path.string() + "': truncated raster");
  return g;
}

Grid<std::uint8_t> to_bytes(const Image& img) {
  Grid<std::uint8_t> g(img.height, img.width);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::round(img.data[i] * 255.0);
    g.data[i] = static_cast<std::uint8_t>(v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v));
  }
  return g;
}

Image from_bytes(const Grid<std::uint8_t>& bytes) {
  Image img(bytes.height, bytes.width);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes.data[i] / 255.0;
  return img;
}

void write_sequence(const SyntheticSequence& seq, const fs::path& dir) {
  if (seq.frames.empty()) throw ConfigError("write_sequence: empty sequence");
  if (seq.masks.size() != seq.frames.size() || seq.visibility.size() != seq.frames.size())
    throw ShapeError("write_sequence: frames, masks and visibility lengths differ");
  fs::create_directories(dir);
  json frames = json::array();
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const Frame& f = seq.frames[i];
    write_pgm(dir / frame_file_name(f.index), to_bytes(f.pixels));
    Grid<std::uint8_t> m(seq.masks[i].height, seq.masks[i].width);
    for (std::size_t k = 0; k < m.size(); ++k) m.data[k] = seq.masks[i].data[k] ? 255 : 0;
    write_pgm(dir / mask_file_name(f.index), m);
    frames.push_back({{"index", f.index},
                      {"frame", frame_file_name(f.index)},
                      {"mask", mask_file_name(f.index)},
                      {"visible", static_cast<bool>(seq.visibility[i])}});
  }
  json events = json::array();
  for (const auto& e : seq.events) events.push_back(detail::to_json(e));
  const json manifest = {{"format", kFormatTag},
                         {"version", kFormatVersion},
                         {"height", seq.frames.front().pixels.height},
                         {"width", seq.frames.front().pixels.width},
                         {"length", seq.frames.size()},
                         {"seed", seq.spec.seed},
                         {"events", events},
                         {"frames", frames},
                         {"scene", detail::to_json(seq.spec)}};
  std::ofstream out(dir / kManifestName);
  if (!out) throw Error("cannot write manifest in '" + dir.string() + "'");
  out << manifest.dump(2) << '\n';
}

SyntheticSequence read_sequence(const fs::path& dir) {
  const fs::path mpath = dir / kManifestName;
  std::ifstream in(mpath);
  if (!in) throw FormatError("missing manifest '" + mpath.string() + "'");
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("manifest '" + mpath.string() + "': " + e.what());
  }
  try {
    if (m.value("format", std::string()) != kFormatTag)
      throw FormatError("manifest: format tag is not '" + std::string(kFormatTag) + "'");
    if (m.value("version", 0) != kFormatVersion)
      throw FormatError("manifest: unsupported version");
    const int height = m.at("height").get<int>();
    const int width = m.at("width").get<int>();
    const int length = m.at("length").get<int>();
    if (length <= 0) throw FormatError("manifest: length must be positive (got " +
                                       std::to_string(length) + ")");
    if (height <= 0 || width <= 0) throw FormatError("manifest: height/width must be positive");
    const json& frames = m.at("frames");
    if (!frames.is_array() || static_cast<int>(frames.size()) != length)
      throw FormatError("manifest: frame list length differs from length");

    SyntheticSequence seq;
    seq.spec = detail::scene_from_json(m.at("scene"), "manifest.scene");
    for (const auto& e : m.at("events"))
      seq.events.push_back(detail::event_from_json(e, "manifest.events"));
    for (const auto& fj : frames) {
      const int index = fj.at("index").get<int>();
      auto load = [&](const char* key) {
        try {
          auto g = read_pgm(dir / fj.at(key).get<std::string>());
          if (g.height != height || g.width != width)
            throw FormatError("size differs from manifest");
          return g;
        } catch (const FormatError& e) {
          throw FormatError(std::string(key) + " " + std::to_string(index) + ": " + e.what());
        }
      };
      Frame f;
      f.index = index;
      f.pixels = from_bytes(load("frame"));
      const auto mb = load("mask");
      BinaryMask mask(height, width);
      for (std::size_t k = 0; k < mask.size(); ++k) {
        if (mb.data[k] != 0 && mb.data[k] != 255)
          throw FormatError("mask " + std::to_string(index) + ": values must be 0 or 255");
        mask.data[k] = mb.data[k] ? 1 : 0;
      }
      seq.frames.push_back(std::move(f));
      seq.masks.push_back(std::move(mask));
      seq.visibility.push_back(fj.at("visible").get<bool>());
    }
    return seq;
  } catch (const json::exception& e) {
    throw FormatError("manifest '" + mpath.string() + "': " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

}  // namespace emasam
