#include "atm/datasets.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "atm/errors.hpp"
#include "atm/io.hpp"
#include "atm/rng.hpp"

namespace atm {

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t offset, const std::string& what) {
  if (offset + 4 > b.size()) {
    throw FormatError(what + ": truncated header at byte " + std::to_string(offset));
  }
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

void put_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

void ShiftSpec::validate() const {
  if (!std::isfinite(magnitude)) throw std::invalid_argument("shift magnitude must be finite");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw std::invalid_argument("shift noise must be finite and >= 0");
}

ShiftKind parse_shift_kind(const std::string& name) {
  if (name == "rotation") return ShiftKind::rotation;
  if (name == "translation") return ShiftKind::translation;
  if (name == "class-conditional-shift" || name == "class_conditional") return ShiftKind::class_conditional;
  throw std::invalid_argument("unknown shift kind '" + name + "'");
}

const char* to_string(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::rotation:
      return "rotation";
    case ShiftKind::translation:
      return "translation";
    case ShiftKind::class_conditional:
      return "class-conditional-shift";
  }
  return "?";
}

SampleSet gen_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n < 2 || n % 2 != 0) throw std::invalid_argument("gen_two_moons: n must be even and >= 2, got " + std::to_string(n));
  if (!(noise >= 0.0)) throw std::invalid_argument("gen_two_moons: noise must be >= 0");
  const std::size_t half = n / 2;
  Rng rng(seed);
  std::vector<double> x(n * 2);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < half; ++i) {
    const double t = half > 1 ? std::numbers::pi * static_cast<double>(i) / static_cast<double>(half - 1) : 0.0;
    x[2 * i] = std::cos(t);
    x[2 * i + 1] = std::sin(t);
    y[i] = 0;
    const std::size_t j = half + i;
    x[2 * j] = 1.0 - std::cos(t);
    x[2 * j + 1] = 0.5 - std::sin(t);
    y[j] = 1;
  }
  if (noise > 0.0)
    for (double& v : x) v += noise * rng.normal();
  return SampleSet(Tensor(n, 2, std::move(x)), std::move(y), Domain::source);
}

SampleSet apply_shift(const SampleSet& s, const ShiftSpec& spec, std::uint64_t seed) {
  spec.validate();
  s.validate();
  const std::size_t n = s.size(), d = s.dim();
  std::vector<double> x(s.features.data().begin(), s.features.data().end());
  switch (spec.kind) {
    case ShiftKind::rotation: {
      if (d != 2) throw DimensionError("apply_shift: rotation needs 2-d samples, got d=" + std::to_string(d));
      const double rad = spec.magnitude * std::numbers::pi / 180.0;
      const double c = std::cos(rad), sn = std::sin(rad);
      for (std::size_t i = 0; i < n; ++i) {
        const double a = x[2 * i], b = x[2 * i + 1];
        x[2 * i] = c * a - sn * b;
        x[2 * i + 1] = sn * a + c * b;
      }
      break;
    }
    case ShiftKind::translation: {
      std::vector<double> dir = spec.direction;
      if (dir.empty()) {
        dir.assign(d, 0.0);
        dir[0] = 1.0;
      }
      if (dir.size() != d) throw DimensionError("apply_shift: translation direction has the wrong dimension");
      double norm = 0.0;
      for (double v : dir) norm += v * v;
      norm = std::sqrt(norm);
      if (norm == 0.0) throw std::invalid_argument("apply_shift: zero translation direction");
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) x[i * d + k] += spec.magnitude * dir[k] / norm;
      break;
    }
    case ShiftKind::class_conditional: {
      if (!s.labels) throw std::invalid_argument("apply_shift: class-conditional shift needs labels");
      for (std::size_t i = 0; i < n; ++i) {
        const auto axis = static_cast<std::size_t>((*s.labels)[i]) % d;
        x[i * d + axis] += spec.magnitude;
      }
      break;
    }
  }
  if (spec.noise > 0.0) {
    Rng rng(seed);
    for (double& v : x) v += spec.noise * rng.normal();
  }
  return SampleSet(Tensor(n, d, std::move(x)), s.labels, s.domain);
}

SampleSet parse_csv(const std::string& text, Domain domain) {
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t width = 0;
  std::istringstream in(text);
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      cells.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? comma : comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cells.size() < 2) {
      throw FormatError("csv row " + std::to_string(row) + ": need at least one feature and a label");
    }
    if (width == 0) width = cells.size();
    if (cells.size() != width) {
      throw FormatError("csv row " + std::to_string(row) + ": expected " + std::to_string(width) + " cells, got " +
                        std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c + 1 < cells.size(); ++c) {
      const auto& cell = cells[c];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
        throw FormatError("csv row " + std::to_string(row) + ", column " + std::to_string(c + 1) +
                          ": non-numeric cell '" + cell + "'");
      }
      values.push_back(v);
    }
    const auto& last = cells.back();
    int label = 0;
    const auto [ptr, ec] = std::from_chars(last.data(), last.data() + last.size(), label);
    if (ec != std::errc() || ptr != last.data() + last.size() || last.empty() || label < 0) {
      throw FormatError("csv row " + std::to_string(row) + ": label '" + last + "' is not a non-negative integer");
    }
    labels.push_back(label);
  }
  if (labels.empty()) throw FormatError("csv: no data rows");
  const std::size_t n = labels.size();
  return SampleSet(Tensor(n, width - 1, std::move(values)), std::move(labels), domain);
}

SampleSet load_csv(const std::filesystem::path& path, Domain domain) {
  try {
    return parse_csv(read_text(path), domain);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string format_csv(const SampleSet& s) {
  if (!s.labels) throw std::invalid_argument("format_csv: sample set has no labels");
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t k = 0; k < s.dim(); ++k) {
      out += format_double(s.features(i, k));
      out += ',';
    }
    out += std::to_string((*s.labels)[i]);
    out += '\n';
  }
  return out;
}

void write_csv(const SampleSet& s, const std::filesystem::path& path) { write_text(path, format_csv(s)); }

SampleSet load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, Domain domain) {
  const auto img = read_bytes(images);
  const auto lab = read_bytes(labels);
  const std::string iname = images.string(), lname = labels.string();

  const std::uint32_t imagic = read_be32(img, 0, iname);
  if (imagic != kIdxImages) {
    throw FormatError(iname + ": bad IDX3 magic " + hex(imagic) + " at byte 0, expected " + hex(kIdxImages));
  }
  const std::uint32_t lmagic = read_be32(lab, 0, lname);
  if (lmagic != kIdxLabels) {
    throw FormatError(lname + ": bad IDX1 magic " + hex(lmagic) + " at byte 0, expected " + hex(kIdxLabels));
  }
  const std::size_t n = read_be32(img, 4, iname);
  const std::size_t rows = read_be32(img, 8, iname);
  const std::size_t cols = read_be32(img, 12, iname);
  const std::size_t nl = read_be32(lab, 4, lname);
  if (n != nl) {
    throw FormatError(lname + ": label count " + std::to_string(nl) + " at byte 4 does not match image count " +
                      std::to_string(n));
  }
  const std::size_t pixels = rows * cols;
  if (img.size() != 16 + n * pixels) {
    throw FormatError(iname + ": expected " + std::to_string(16 + n * pixels) + " bytes, file has " +
                      std::to_string(img.size()));
  }
  if (lab.size() != 8 + n) {
    throw FormatError(lname + ": expected " + std::to_string(8 + n) + " bytes, file has " + std::to_string(lab.size()));
  }
  std::vector<double> x(n * pixels);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(img[16 + i]) / 255.0;
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = lab[8 + i];
  return SampleSet(Tensor(n, pixels, std::move(x)), std::move(y), domain);
}

void write_idx(const SampleSet& s, std::size_t image_rows, std::size_t image_cols,
               const std::filesystem::path& images, const std::filesystem::path& labels) {
  if (!s.labels) throw std::invalid_argument("write_idx: sample set has no labels");
  if (image_rows * image_cols != s.dim()) throw DimensionError("write_idx: image shape does not match feature width");
  std::string img, lab;
  put_be32(img, kIdxImages);
  put_be32(img, static_cast<std::uint32_t>(s.size()));
  put_be32(img, static_cast<std::uint32_t>(image_rows));
  put_be32(img, static_cast<std::uint32_t>(image_cols));
  for (double v : s.features.data()) {
    const long b = std::lround(v * 255.0);
    if (b < 0 || b > 255) throw std::out_of_range("write_idx: feature value outside [0, 1]");
    img.push_back(static_cast<char>(b));
  }
  put_be32(lab, kIdxLabels);
  put_be32(lab, static_cast<std::uint32_t>(s.size()));
  for (int y : *s.labels) {
    if (y < 0 || y > 255) throw std::out_of_range("write_idx: label outside a byte");
    lab.push_back(static_cast<char>(y));
  }
  write_text(images, img);
  write_text(labels, lab);
}

std::pair<SampleSet, Standardization> standardize(const SampleSet& s, const std::optional<Standardization>& stats) {
  s.validate();
  const std::size_t n = s.size(), d = s.dim();
  Standardization st;
  if (stats) {
    st = *stats;
    if (st.mean.size() != d || st.stddev.size() != d) {
      throw DimensionError("standardize: statistics have " + std::to_string(st.mean.size()) + " features, data has " +
                           std::to_string(d));
    }
  } else {
    if (n < 2) throw std::invalid_argument("standardize: need at least 2 samples to compute statistics");
    st.mean.assign(d, 0.0);
    st.stddev.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) st.mean[k] += s.features(i, k);
    for (double& m : st.mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) {
        const double c = s.features(i, k) - st.mean[k];
        st.stddev[k] += c * c;
      }
    for (double& v : st.stddev) v = std::sqrt(v / static_cast<double>(n));
  }
  std::vector<double> x(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double c = s.features(i, k) - st.mean[k];
      x[i * d + k] = st.stddev[k] > 0.0 ? c / st.stddev[k] : c;
    }
  return {SampleSet(Tensor(n, d, std::move(x)), s.labels, s.domain), st};
}

}  // namespace atm
