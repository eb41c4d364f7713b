#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hymlab/flows.hpp"

namespace hymlab {

/// Metric checkpoint: grid shape and periods, flow clock, then the field.
///
/// Layout, all little-endian: magic "HYMLABCK", u32 version, u32 ndim, i32 shape[ndim],
/// f64 periods[ndim], u32 rank, u64 points, f64 t, u64 step, f64 dt, f64 dissipated, f64 eps,
/// then points * rank * rank complex doubles (re, im), row-major per point.
struct Checkpoint {
  std::vector<int> shape;
  std::vector<double> periods;
  EndField H;
  double t = 0.0;
  std::uint64_t step = 0;
  double dt = 0.0;
  double dissipated = 0.0;
  double eps = 0.0;
};

inline constexpr std::array<char, 8> kCheckpointMagic{'H', 'Y', 'M', 'L', 'A', 'B', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  U out = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) out = (out << 8) | ((v >> (8 * i)) & 0xff);
  return out;
}

class LeWriter {
 public:
  explicit LeWriter(std::ostream& os) : os_(os) {}
  void u32(std::uint32_t v) { raw(to_le(v)); }
  void i32(std::int32_t v) { raw(to_le(std::bit_cast<std::uint32_t>(v))); }
  void u64(std::uint64_t v) { raw(to_le(v)); }
  void f64(double v) { raw(to_le(std::bit_cast<std::uint64_t>(v))); }

 private:
  template <class U>
  void raw(U v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(U));
  }
  std::ostream& os_;
};

class LeReader {
 public:
  LeReader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}
  std::uint32_t u32() { return to_le(raw<std::uint32_t>()); }
  std::int32_t i32() { return std::bit_cast<std::int32_t>(u32()); }
  std::uint64_t u64() { return to_le(raw<std::uint64_t>()); }
  double f64() { return std::bit_cast<double>(u64()); }

 private:
  template <class U>
  U raw() {
    U v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(U));
    if (!is_) throw Error(ErrorKind::io, "truncated checkpoint " + what_);
    return v;
  }
  std::istream& is_;
  std::string what_;
};

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  require(c.shape.size() == c.periods.size(), ErrorKind::mismatch, "checkpoint shape and periods differ in length");
  std::size_t points = 1;
  for (int s : c.shape) points *= static_cast<std::size_t>(s);
  require(c.H.points() == points, ErrorKind::mismatch, "checkpoint field does not match its grid shape");
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::LeWriter w(os);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.shape.size()));
  for (int s : c.shape) w.i32(s);
  for (double p : c.periods) w.f64(p);
  w.u32(static_cast<std::uint32_t>(c.H.rank()));
  w.u64(points);
  w.f64(c.t);
  w.u64(c.step);
  w.f64(c.dt);
  w.f64(c.dissipated);
  w.f64(c.eps);
  for (const cd& z : c.H.raw()) {
    w.f64(z.real());
    w.f64(z.imag());
  }
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorKind::io, "cannot open " + tmp.string() + " for writing");
    write_checkpoint(os, c);
    if (!os) throw Error(ErrorKind::io, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(std::istream& is, const std::string& what = "stream") {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kCheckpointMagic) throw Error(ErrorKind::io, "not a hymlab checkpoint: " + what);
  detail::LeReader r(is, what);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw Error(ErrorKind::io, "unsupported checkpoint version " + std::to_string(version) + " in " + what);
  const std::uint32_t ndim = r.u32();
  if (ndim == 0 || ndim > 16 || ndim % 2) throw Error(ErrorKind::io, "bad dimension count in " + what);
  Checkpoint c;
  std::uint64_t points = 1;
  for (std::uint32_t k = 0; k < ndim; ++k) {
    const std::int32_t s = r.i32();
    if (s <= 0 || s > 4096) throw Error(ErrorKind::io, "bad grid entry in " + what);
    c.shape.push_back(s);
    points *= static_cast<std::uint64_t>(s);
  }
  for (std::uint32_t k = 0; k < ndim; ++k) c.periods.push_back(r.f64());
  const std::uint32_t rank = r.u32();
  if (rank == 0 || static_cast<int>(rank) > kMaxRank) throw Error(ErrorKind::io, "bad rank in " + what);
  if (r.u64() != points) throw Error(ErrorKind::io, "point count disagrees with grid shape in " + what);
  c.t = r.f64();
  c.step = r.u64();
  c.dt = r.f64();
  c.dissipated = r.f64();
  c.eps = r.f64();
  c.H = EndField(static_cast<int>(rank), points);
  for (cd& z : c.H.raw()) {
    const double re = r.f64();
    z = cd(re, r.f64());
  }
  return c;
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::io, "cannot open checkpoint " + path.string());
  return read_checkpoint(is, path.string());
}

// ---------------------------------------------------------------- trace CSV

inline constexpr const char* kTraceCsvVersion = "# hymlab-trace v1";
inline constexpr std::array<const char*, 8> kTraceColumns{"step", "t", "eps", "ym_energy",
                                                          "sup_F", "he_residual", "min_eig_H", "dt"};

/// Shortest representation that reads back to the same double.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline void write_trace_header(std::ostream& os) {
  os << kTraceCsvVersion << '\n';
  for (std::size_t i = 0; i < kTraceColumns.size(); ++i) os << (i ? "," : "") << kTraceColumns[i];
  os << '\n';
}

inline void write_trace_row(std::ostream& os, const FlowSample& s) {
  os << s.step << ',' << format_double(s.t) << ',' << format_double(s.eps) << ',' << format_double(s.ym) << ','
     << format_double(s.sup_F) << ',' << format_double(s.he_residual) << ',' << format_double(s.min_eig_H) << ','
     << format_double(s.dt) << '\n';
}

inline void write_trace_csv(std::ostream& os, const std::vector<FlowSample>& samples) {
  write_trace_header(os);
  for (const auto& s : samples) write_trace_row(os, s);
}

inline std::vector<FlowSample> read_trace_csv(std::istream& is, const std::string& what = "stream") {
  std::string line;
  if (!std::getline(is, line) || line != kTraceCsvVersion)
    throw Error(ErrorKind::io, what + ": missing \"" + kTraceCsvVersion + "\" header line");
  if (!std::getline(is, line)) throw Error(ErrorKind::io, what + ": missing column line");
  {
    std::string expect;
    for (std::size_t i = 0; i < kTraceColumns.size(); ++i) expect += std::string(i ? "," : "") + kTraceColumns[i];
    if (line != expect) throw Error(ErrorKind::io, what + ": columns must be " + expect);
  }
  std::vector<FlowSample> out;
  std::size_t lineno = 2;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::array<double, 8> v{};
    std::size_t col = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (col < v.size()) {
      const auto res = std::from_chars(p, end, v[col]);
      if (res.ec != std::errc())
        throw Error(ErrorKind::io, what + ": bad value in column " + kTraceColumns[col] + " on line " + std::to_string(lineno));
      p = res.ptr;
      ++col;
      if (col < v.size()) {
        if (p == end || *p != ',') throw Error(ErrorKind::io, what + ": too few columns on line " + std::to_string(lineno));
        ++p;
      }
    }
    if (p != end) throw Error(ErrorKind::io, what + ": too many columns on line " + std::to_string(lineno));
    FlowSample s;
    s.step = static_cast<std::size_t>(v[0]);
    s.t = v[1];
    s.eps = v[2];
    s.ym = v[3];
    s.sup_F = v[4];
    s.he_residual = v[5];
    s.min_eig_H = v[6];
    s.dt = v[7];
    out.push_back(s);
  }
  return out;
}

inline std::vector<FlowSample> read_trace_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::io, "cannot open trace " + path.string());
  return read_trace_csv(is, path.string());
}

}  // namespace hymlab
