#pragma once

// Vol1 volume files, covariate and result CSVs, PGM slice images.
//
// Vol1 layout (little-endian):
//   "VOL1" | u16 version | u32 nx, ny, nz | f64 sx, sy, sz | u8 dtype | payload
// dtype 1 = f32, dtype 2 = u8 (masks). Payload is x-fastest.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "svcm/errors.hpp"
#include "svcm/lsq.hpp"
#include "svcm/volume.hpp"

namespace svcm {

enum class VolDType : std::uint8_t { F32 = 1, U8 = 2 };

inline constexpr std::uint16_t kVol1Version = 1;
inline constexpr std::size_t kVol1HeaderBytes = 4 + 2 + 3 * 4 + 3 * 8 + 1;

struct Volume {
  Grid3 grid;
  VolDType dtype = VolDType::F32;
  std::vector<float> data;  ///< one value per grid voxel; u8 volumes are widened
};

namespace detail {

template <class T>
void put_le(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <class T>
T get_le(const std::string& buf, std::size_t& pos, const std::string& path) {
  if (pos + sizeof(T) > buf.size())
    throw ParseError(path + ": truncated at byte offset " + std::to_string(buf.size()) + " (needed " +
                     std::to_string(pos + sizeof(T)) + " bytes)");
  char bytes[sizeof(T)];
  std::memcpy(bytes, buf.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError(path.string() + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ParseError(path.string() + ": write failed");
}

}  // namespace detail

inline std::string encode_volume(const Volume& v) {
  if (static_cast<VoxelId>(v.data.size()) != v.grid.size())
    throw DomainError("encode_volume: payload size does not match dims");
  std::string buf;
  buf.reserve(kVol1HeaderBytes + v.data.size() * 4);
  buf.append("VOL1", 4);
  detail::put_le<std::uint16_t>(buf, kVol1Version);
  for (int d : v.grid.dims()) detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
  for (double s : v.grid.spacing()) detail::put_le<double>(buf, s);
  detail::put_le<std::uint8_t>(buf, static_cast<std::uint8_t>(v.dtype));
  if (v.dtype == VolDType::F32) {
    for (float f : v.data) detail::put_le<float>(buf, f);
  } else {
    for (float f : v.data) {
      if (!(f >= 0.0f && f <= 255.0f) || f != std::floor(f)) throw DomainError("encode_volume: u8 value out of range");
      detail::put_le<std::uint8_t>(buf, static_cast<std::uint8_t>(f));
    }
  }
  return buf;
}

inline Volume decode_volume(const std::string& buf, const std::string& path = "<memory>") {
  if (buf.size() < 4 || std::memcmp(buf.data(), "VOL1", 4) != 0) throw ParseError(path + ": bad magic (expected VOL1)");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint16_t>(buf, pos, path);
  if (version != kVol1Version) throw ParseError(path + ": unsupported version " + std::to_string(version));
  std::array<int, 3> dims{};
  for (int& d : dims) {
    const auto v = detail::get_le<std::uint32_t>(buf, pos, path);
    if (v == 0 || v > static_cast<std::uint32_t>(std::numeric_limits<int>::max()))
      throw ParseError(path + ": invalid dimension " + std::to_string(v));
    d = static_cast<int>(v);
  }
  std::array<double, 3> spacing{};
  for (double& s : spacing) s = detail::get_le<double>(buf, pos, path);
  const auto code = detail::get_le<std::uint8_t>(buf, pos, path);
  if (code != 1 && code != 2) throw ParseError(path + ": unknown dtype code " + std::to_string(code));
  Volume v;
  try {
    v.grid = Grid3(dims, spacing);
  } catch (const DomainError& e) {
    throw ParseError(path + ": " + e.what());
  }
  v.dtype = static_cast<VolDType>(code);
  const std::size_t count = static_cast<std::size_t>(v.grid.size());
  const std::size_t width = v.dtype == VolDType::F32 ? 4 : 1;
  const std::size_t expected = pos + count * width;
  if (buf.size() < expected)
    throw ParseError(path + ": truncated payload at byte offset " + std::to_string(buf.size()) + " (expected " +
                     std::to_string(expected) + " bytes)");
  if (buf.size() > expected)
    throw ParseError(path + ": " + std::to_string(buf.size() - expected) + " trailing bytes after payload");
  v.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (v.dtype == VolDType::F32) {
      v.data[i] = detail::get_le<float>(buf, pos, path);
      if (!std::isfinite(v.data[i]))
        throw ParseError(path + ": non-finite value at voxel index " + std::to_string(i));
    } else {
      v.data[i] = detail::get_le<std::uint8_t>(buf, pos, path);
    }
  }
  return v;
}

inline Volume read_volume(const std::filesystem::path& path) {
  return decode_volume(detail::read_file(path), path.string());
}

inline void write_volume(const std::filesystem::path& path, const Volume& v) {
  detail::write_file(path, encode_volume(v));
}

/// Scatter per-rank values into a full-grid f32 volume (inactive voxels = 0).
inline Volume volume_from_field(const Mask& mask, const Eigen::Ref<const Eigen::RowVectorXd>& values) {
  if (values.size() != mask.n_active()) throw DomainError("volume_from_field: value count != active voxels");
  Volume v{mask.grid(), VolDType::F32, std::vector<float>(static_cast<std::size_t>(mask.grid().size()), 0.0f)};
  for (Rank r = 0; r < mask.n_active(); ++r) v.data[static_cast<std::size_t>(mask.voxel(r))] = static_cast<float>(values(r));
  return v;
}

inline Volume mask_volume(const Mask& mask) {
  Volume v{mask.grid(), VolDType::U8, {}};
  v.data.assign(mask.flags().begin(), mask.flags().end());
  return v;
}

inline Mask mask_from_volume(const Volume& v) {
  std::vector<std::uint8_t> flags(v.data.size());
  for (std::size_t i = 0; i < v.data.size(); ++i) flags[i] = v.data[i] != 0.0f ? 1 : 0;
  return Mask(v.grid, std::move(flags));
}

/// Loads subject volumes; all must share dims and spacing with the first.
inline std::vector<Volume> read_subject_volumes(const std::vector<std::filesystem::path>& paths) {
  if (paths.empty()) throw DomainError("no subject volumes given");
  std::vector<Volume> out;
  out.reserve(paths.size());
  for (const auto& p : paths) {
    out.push_back(read_volume(p));
    if (!(out.back().grid == out.front().grid))
      throw ParseError("grid mismatch: " + p.string() + " does not match " + paths.front().string());
  }
  return out;
}

/// Voxels where the subject values are not all equal.
inline Mask auto_mask(const std::vector<Volume>& subjects) {
  const Grid3& g = subjects.front().grid;
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(g.size()), 0);
  for (std::size_t v = 0; v < flags.size(); ++v) {
    const float first = subjects.front().data[v];
    for (const auto& s : subjects)
      if (s.data[v] != first) {
        flags[v] = 1;
        break;
      }
  }
  return Mask(g, std::move(flags));
}

inline SubjectStack stack_from_volumes(const std::vector<Volume>& subjects, const Mask& mask) {
  SubjectStack st{mask, Eigen::MatrixXd(static_cast<Eigen::Index>(subjects.size()), mask.n_active())};
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (!(subjects[i].grid == mask.grid())) throw ParseError("subject " + std::to_string(i) + " does not match the mask grid");
    for (Rank r = 0; r < mask.n_active(); ++r)
      st.y(static_cast<Eigen::Index>(i), r) = subjects[i].data[static_cast<std::size_t>(mask.voxel(r))];
  }
  return st;
}

// ---- CSV ----

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct CsvTable {
  std::vector<std::string> header;
  Eigen::MatrixXd values;
};

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r\"");
    const auto e = cell.find_last_not_of(" \t\r\"");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}
}  // namespace detail

/// Numeric CSV with a header row; blank lines are skipped.
inline CsvTable parse_numeric_csv(const std::string& text, const std::string& path = "<memory>") {
  std::istringstream in(text);
  std::string line;
  CsvTable t;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string::npos) break;
  }
  if (in.eof() && line.find_first_not_of(" \t\r") == std::string::npos) throw ParseError(path + ": empty CSV");
  t.header = detail::split_csv_line(line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != t.header.size())
      throw ParseError(path + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                       " fields, header has " + std::to_string(t.header.size()));
    std::vector<double> row;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[c], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cells[c].size() || !std::isfinite(v))
        throw ParseError(path + ": line " + std::to_string(line_no) + ", column '" + t.header[c] +
                         "': not a finite number: '" + cells[c] + "'");
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) t.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return t;
}

inline CsvTable read_numeric_csv(const std::filesystem::path& path) {
  return parse_numeric_csv(detail::read_file(path), path.string());
}

/// Writes header + rows at 17 significant digits.
inline void write_numeric_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                              const Eigen::MatrixXd& values) {
  if (static_cast<Eigen::Index>(header.size()) != values.cols()) throw DomainError("write_numeric_csv: header width mismatch");
  std::string out;
  for (std::size_t c = 0; c < header.size(); ++c) out += (c ? "," : "") + header[c];
  out += '\n';
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) out += (c ? "," : "") + format_double(values(r, c));
    out += '\n';
  }
  detail::write_file(path, out);
}

/// Plain text rows (already formatted), for mixed string/number tables.
inline void write_text_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                           const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (std::size_t c = 0; c < header.size(); ++c) out += (c ? "," : "") + header[c];
  out += '\n';
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out += (c ? "," : "") + row[c];
    out += '\n';
  }
  detail::write_file(path, out);
}

// ---- PGM ----

/// Binary 8-bit PGM of one axial slice, mapping [lo, hi] to [0, 255].
inline void write_pgm_slice(const std::filesystem::path& path, const Volume& v, int k, double lo, double hi) {
  const auto& dims = v.grid.dims();
  if (k < 0 || k >= dims[2]) throw DomainError("write_pgm_slice: slice out of range");
  std::string out = "P5\n" + std::to_string(dims[0]) + " " + std::to_string(dims[1]) + "\n255\n";
  const double span = hi > lo ? hi - lo : 1.0;
  // Row 0 of the image is the largest y so the slice displays upright.
  for (int j = dims[1] - 1; j >= 0; --j)
    for (int i = 0; i < dims[0]; ++i) {
      const double t = (v.data[static_cast<std::size_t>(v.grid.linear(i, j, k))] - lo) / span;
      out += static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0)));
    }
  detail::write_file(path, out);
}

/// One PGM per slice, named <prefix>_z<k>.pgm, scaled to the volume's range.
inline void write_pgm_slices(const std::filesystem::path& dir, const std::string& prefix, const Volume& v) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (float f : v.data) {
    lo = std::min(lo, static_cast<double>(f));
    hi = std::max(hi, static_cast<double>(f));
  }
  for (int k = 0; k < v.grid.dims()[2]; ++k)
    write_pgm_slice(dir / (prefix + "_z" + std::to_string(k) + ".pgm"), v, k, lo, hi);
}

}  // namespace svcm
