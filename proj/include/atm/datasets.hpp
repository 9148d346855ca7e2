#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "atm/divergence.hpp"

namespace atm {

enum class ShiftKind { rotation, translation, class_conditional };

/// How a target domain is derived from a source sample.
///
/// rotation: `magnitude` degrees counter-clockwise about the origin (d = 2).
/// translation: every row moves by `magnitude` along `direction` (unit-normalised,
///   default the first axis).
/// class_conditional: rows of class c move by `magnitude` along axis c mod d.
/// `noise` adds isotropic Gaussian jitter with that standard deviation.
struct ShiftSpec {
  ShiftKind kind = ShiftKind::rotation;
  double magnitude = 0.0;
  double noise = 0.0;
  std::vector<double> direction;

  void validate() const;
};

ShiftKind parse_shift_kind(const std::string& name);
const char* to_string(ShiftKind kind);

/// n/2 points on each of two interleaved unit half-circles, labels 0 and 1,
/// plus isotropic Gaussian noise.
SampleSet gen_two_moons(std::size_t n, double noise, std::uint64_t seed);

SampleSet apply_shift(const SampleSet& s, const ShiftSpec& spec, std::uint64_t seed);

/// Comma separated, no header, last column an integer label.
SampleSet load_csv(const std::filesystem::path& path, Domain domain = Domain::source);
SampleSet parse_csv(const std::string& text, Domain domain = Domain::source);
/// Writes rows in the load_csv layout with 17 significant digits.
void write_csv(const SampleSet& s, const std::filesystem::path& path);
std::string format_csv(const SampleSet& s);

/// Big-endian IDX3 images (magic 0x00000803) and IDX1 labels (0x00000801).
/// Images are flattened to rows and scaled to [0, 1].
SampleSet load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                   Domain domain = Domain::source);
/// Inverse of load_idx; pixel values are rounded back to bytes.
void write_idx(const SampleSet& s, std::size_t image_rows, std::size_t image_cols,
               const std::filesystem::path& images, const std::filesystem::path& labels);

struct Standardization {
  std::vector<double> mean;
  std::vector<double> stddev;  // population; 0 marks a constant feature
};

/// Per-feature zero mean and unit variance. With `stats` supplied they are
/// applied as-is, otherwise computed from `s` (needs n ≥ 2).
std::pair<SampleSet, Standardization> standardize(const SampleSet& s,
                                                  const std::optional<Standardization>& stats = std::nullopt);

}  // namespace atm
