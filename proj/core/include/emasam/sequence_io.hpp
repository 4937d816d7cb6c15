#pragma once

// On-disk sequence format.  A sequence directory holds
//   manifest.json           size, T, seed, events, scene parameters, file names
//   frame_NNNN.pgm          binary PGM (P5, maxval 255), one per frame
//   mask_NNNN.pgm           binary PGM with values {0, 255}
// Pixel values are stored as round(255 v); generated frames are already on
// that lattice, so write/read round-trips bit-exactly.

#include <filesystem>
#include <string>

#include "emasam/image.hpp"
#include "emasam/synth.hpp"

namespace emasam {

void write_pgm(const std::filesystem::path& path, const Grid<std::uint8_t>& bytes);
Grid<std::uint8_t> read_pgm(const std::filesystem::path& path);

Grid<std::uint8_t> to_bytes(const Image& img);
Image from_bytes(const Grid<std::uint8_t>& bytes);

void write_sequence(const SyntheticSequence& seq, const std::filesystem::path& dir);
/// Throws FormatError with the offending frame index or manifest field.
SyntheticSequence read_sequence(const std::filesystem::path& dir);

std::string frame_file_name(int index);
std::string mask_file_name(int index);

}  // namespace emasam
