#pragma once

/// \file
/// `.snsckpt` checkpoint files.
///
/// Layout, all integers little-endian:
///
///     "SNSB"                      magic
///     u32 length, bytes           version string ("snowball-ns/v1")
///     section*                    CONF, STAT, REPT, MEMO in that order
///
/// Each section is a 4-byte tag, a u64 payload length, the payload and the
/// CRC32C of the payload. Doubles are stored as their IEEE-754 bit pattern
/// so that memo keys survive a round trip exactly.

#include <boost/crc.hpp>
#include <array>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "snowball_ns/memo.hpp"
#include "snowball_ns/numeric.hpp"
#include "snowball_ns/snowball.hpp"

namespace snowball_ns {

inline constexpr std::string_view kCheckpointMagic = "SNSB";
inline constexpr std::string_view kCheckpointVersion = "snowball-ns/v1";
inline constexpr std::string_view kCheckpointExtension = ".snsckpt";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::string format_version{kCheckpointVersion};
  SnowballConfig config;
  SnowballState state;  ///< completed iterations, reports, memo table, proposal scale
  std::uint64_t master_seed = 0;
};

inline std::uint32_t crc32c(std::string_view bytes) {
  boost::crc_optimal<32, 0x1EDC6F41, 0xFFFFFFFF, 0xFFFFFFFF, true, true> crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(double_bits(v)); }
  void str(std::string_view s) {
    u64(s.size());
    buf_.append(s);
  }
  void raw(std::string_view s) { buf_.append(s); }
  void doubles(const std::vector<double>& xs) {
    u64(xs.size());
    for (double x : xs) f64(x);
  }
  const std::string& bytes() const noexcept { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string section) : data_(data), section_(std::move(section)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return bits_double(u64()); }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return std::string(raw(length())); }
  std::vector<double> doubles() {
    const auto n = length(8);
    std::vector<double> xs(n);
    for (auto& x : xs) x = f64();
    return xs;
  }
  /// A count whose elements occupy at least `min_element_bytes` each.
  std::uint64_t length(std::size_t min_element_bytes = 1) {
    const std::uint64_t n = u64();
    if (n > remaining() / min_element_bytes) fail("length field exceeds remaining data");
    return n;
  }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw CheckpointError("checkpoint " + section_ + " section: " + what);
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) fail("truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string section_;
};

inline void write_config(ByteWriter& w, const SnowballConfig& c) {
  w.str(c.problem.name);
  w.u64(c.problem.dim);
  w.f64(c.problem.lo);
  w.f64(c.problem.hi);
  w.f64(c.problem.sigma);
  w.f64(c.problem.const_logl);
  w.u64(c.k0);
  w.u64(c.k_inc);
  w.u64(c.m_steps);
  w.f64(c.term_epsilon);
  w.u64(c.max_outer_iterations);
  w.u64(c.seed);
  w.u8(c.use_memo ? 1 : 0);
  w.f64(c.gamma0);
  w.f64(c.kappa);
  w.u64(c.max_dead);
}

inline SnowballConfig read_config(ByteReader& r) {
  SnowballConfig c;
  c.problem.name = r.str();
  c.problem.dim = r.u64();
  c.problem.lo = r.f64();
  c.problem.hi = r.f64();
  c.problem.sigma = r.f64();
  c.problem.const_logl = r.f64();
  c.k0 = r.u64();
  c.k_inc = r.u64();
  c.m_steps = r.u64();
  c.term_epsilon = r.f64();
  c.max_outer_iterations = r.u64();
  c.seed = r.u64();
  c.use_memo = r.u8() != 0;
  c.gamma0 = r.f64();
  c.kappa = r.f64();
  c.max_dead = r.u64();
  return c;
}

inline void write_report(ByteWriter& w, const SnowballReport& rep) {
  w.u64(rep.outer_iteration);
  w.u64(rep.k);
  w.f64(rep.log_z);
  w.f64(rep.log_z_err);
  w.f64(rep.ess);
  w.u64(rep.n_dead);
  w.u64(rep.n_like_evals_cumulative);
  w.u64(rep.n_lrps_calls_new);
  w.u64(rep.n_memo_hits);
  w.f64(rep.wall_seconds);
  w.u8(rep.failed ? 1 : 0);
}

inline SnowballReport read_report(ByteReader& r) {
  SnowballReport rep;
  rep.outer_iteration = r.u64();
  rep.k = r.u64();
  rep.log_z = r.f64();
  rep.log_z_err = r.f64();
  rep.ess = r.f64();
  rep.n_dead = r.u64();
  rep.n_like_evals_cumulative = r.u64();
  rep.n_lrps_calls_new = r.u64();
  rep.n_memo_hits = r.u64();
  rep.wall_seconds = r.f64();
  rep.failed = r.u8() != 0;
  return rep;
}

inline void write_walk(ByteWriter& w, const WalkResult& res) {
  w.doubles(res.point.u);
  w.doubles(res.point.theta);
  w.f64(res.point.logl);
  w.u64(res.point.origin_id);
  w.i64(res.n_accepted);
  w.i64(res.n_proposed);
  w.u64(res.chain_start_id);
}

inline WalkResult read_walk(ByteReader& r) {
  WalkResult res;
  res.point.u = r.doubles();
  res.point.theta = r.doubles();
  res.point.logl = r.f64();
  res.point.origin_id = r.u64();
  res.n_accepted = static_cast<int>(r.i64());
  res.n_proposed = static_cast<int>(r.i64());
  res.chain_start_id = r.u64();
  return res;
}

inline void write_section(ByteWriter& out, std::string_view tag, const ByteWriter& payload) {
  out.raw(tag);
  out.u64(payload.bytes().size());
  out.raw(payload.bytes());
  out.u32(crc32c(payload.bytes()));
}

inline std::string_view read_section(ByteReader& in, std::string_view tag) {
  const auto got = in.raw(4);
  if (got != tag) in.fail("expected section " + std::string(tag) + ", found '" + std::string(got) + "'");
  const std::uint64_t len = in.u64();
  if (len > in.remaining()) {
    throw CheckpointError("checkpoint " + std::string(tag) + " section: truncated");
  }
  const auto payload = in.raw(static_cast<std::size_t>(len));
  if (in.remaining() < 4) throw CheckpointError("checkpoint " + std::string(tag) + " section: truncated");
  if (in.u32() != crc32c(payload)) {
    throw CheckpointError("checkpoint " + std::string(tag) + " section: checksum mismatch");
  }
  return payload;
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  using detail::ByteWriter;
  ByteWriter out;
  out.raw(kCheckpointMagic);
  out.u32(static_cast<std::uint32_t>(ck.format_version.size()));
  out.raw(ck.format_version);

  ByteWriter conf;
  detail::write_config(conf, ck.config);
  detail::write_section(out, "CONF", conf);

  ByteWriter stat;
  stat.u64(ck.state.completed_outer_iterations);
  stat.u64(ck.master_seed);
  stat.f64(ck.state.proposal.scale);
  stat.u64(ck.state.proposal.call_index);
  stat.u64(ck.state.proposal.accept_history.size());
  for (const auto& h : ck.state.proposal.accept_history) {
    stat.f64(h.scale);
    stat.f64(h.accepted_fraction);
  }
  stat.u64(ck.state.memo.n_hits());
  stat.u64(ck.state.memo.n_misses());
  detail::write_section(out, "STAT", stat);

  ByteWriter rept;
  rept.u64(ck.state.reports.size());
  for (const auto& r : ck.state.reports) detail::write_report(rept, r);
  detail::write_section(out, "REPT", rept);

  ByteWriter memo;
  memo.u64(ck.state.memo.size());
  for (const auto& [key, res] : ck.state.memo.entries()) {
    memo.u64(key.lmin_bits);
    detail::write_walk(memo, res);
  }
  detail::write_section(out, "MEMO", memo);
  return out.bytes();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  using detail::ByteReader;
  ByteReader in(bytes, "header");
  if (in.remaining() < kCheckpointMagic.size() || in.raw(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const std::uint32_t vlen = in.u32();
  Checkpoint ck;
  ck.format_version = std::string(in.raw(vlen));
  if (ck.format_version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version '" + ck.format_version + "' (expected '" +
                          std::string(kCheckpointVersion) + "')");
  }

  {
    ByteReader r(detail::read_section(in, "CONF"), "CONF");
    ck.config = detail::read_config(r);
    if (!r.at_end()) r.fail("trailing bytes");
  }
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  {
    ByteReader r(detail::read_section(in, "STAT"), "STAT");
    ck.state.completed_outer_iterations = r.u64();
    ck.master_seed = r.u64();
    ck.state.proposal.scale = r.f64();
    ck.state.proposal.call_index = r.u64();
    const auto n = r.length(16);
    for (std::uint64_t i = 0; i < n; ++i) {
      const double scale = r.f64();
      const double frac = r.f64();
      ck.state.proposal.accept_history.push_back({scale, frac});
    }
    hits = r.u64();
    misses = r.u64();
    if (!r.at_end()) r.fail("trailing bytes");
  }
  ck.state.proposal.gamma0 = ck.config.gamma0;
  ck.state.proposal.kappa = ck.config.kappa;
  {
    ByteReader r(detail::read_section(in, "REPT"), "REPT");
    const auto n = r.length(8);
    for (std::uint64_t i = 0; i < n; ++i) ck.state.reports.push_back(detail::read_report(r));
    if (!r.at_end()) r.fail("trailing bytes");
  }
  {
    ByteReader r(detail::read_section(in, "MEMO"), "MEMO");
    const auto n = r.length(8);
    MemoTable::Entries entries;
    for (std::uint64_t i = 0; i < n; ++i) {
      const MemoKey key{r.u64()};
      entries.emplace(key, detail::read_walk(r));
    }
    if (!r.at_end()) r.fail("trailing bytes");
    ck.state.memo = MemoTable::restore(std::move(entries), hits, misses);
  }
  if (!in.at_end()) throw CheckpointError("checkpoint: unexpected data after MEMO section");
  return ck;
}

/// Writes atomically: the bytes go to `<path>.tmp`, which is then renamed.
inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ck);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) {
      throw CheckpointError("cannot write checkpoint " + path.string() + ": " + std::strerror(errno));
    }
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    os.flush();
    if (!os) {
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw CheckpointError("cannot write checkpoint " + path.string() + ": write failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    std::filesystem::remove(tmp, ignored);
    throw CheckpointError("cannot write checkpoint " + path.string() + ": " + ec.message());
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string() + ": " + std::strerror(errno));
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

inline Checkpoint make_checkpoint(const Snowball& engine) {
  Checkpoint ck;
  ck.config = engine.config();
  ck.state = engine.state();
  ck.master_seed = engine.config().seed;
  return ck;
}

inline Snowball resume_snowball(const Checkpoint& ck) {
  if (ck.master_seed != ck.config.seed) throw CheckpointError("checkpoint: master seed does not match config");
  return Snowball(ck.config, ck.state);
}

}  // namespace snowball_ns
