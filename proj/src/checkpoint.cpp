#include "mwrdcnn/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace mwrdcnn {
namespace {

constexpr char kMagic[4] = {'M', 'W', 'R', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kMaxElems = std::uint64_t(1) << 30;

// --- little-endian writer ------------------------------------------------

struct Writer {
  std::vector<std::uint8_t> buf;

  void u8(std::uint8_t v) { buf.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void str(const std::string& s) {
    u64(s.size());
    buf.insert(buf.end(), s.begin(), s.end());
  }
  void floats(const std::vector<float>& v) {
    for (float f : v) f32(f);
  }
};

// --- little-endian reader with offset-bearing errors ---------------------

struct Reader {
  const std::vector<std::uint8_t>& buf;
  const std::string& origin;
  std::size_t off = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error(origin + ": " + what + " at byte " + std::to_string(off));
  }
  void need(std::size_t n) const {
    if (buf.size() - off < n) fail("unexpected end of file");
  }
  std::uint8_t u8() {
    need(1);
    return buf[off++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[off + i]) << (8 * i);
    off += 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(std::uint64_t max_len) {
    const std::uint64_t n = u64();
    if (n > max_len) fail("string length " + std::to_string(n) + " is implausible");
    need(static_cast<std::size_t>(n));
    std::string s(buf.begin() + static_cast<std::ptrdiff_t>(off),
                  buf.begin() + static_cast<std::ptrdiff_t>(off + n));
    off += static_cast<std::size_t>(n);
    return s;
  }
  std::vector<float> floats(std::uint64_t n) {
    if (n > kMaxElems) fail("tensor with " + std::to_string(n) + " elements is implausible");
    need(static_cast<std::size_t>(n) * 4);
    std::vector<float> v(static_cast<std::size_t>(n));
    for (float& f : v) f = f32();
    return v;
  }
};

void write_config(Writer& w, const ModelConfig& c) {
  w.u32(static_cast<std::uint32_t>(c.levels));
  w.u32(static_cast<std::uint32_t>(c.channels.size()));
  for (int ch : c.channels) w.u32(static_cast<std::uint32_t>(ch));
  w.u32(static_cast<std::uint32_t>(c.rdb_depth));
  w.u8(c.bn_policy == BnPolicy::kDefault ? 1 : 0);
}

ModelConfig read_config(Reader& r) {
  ModelConfig c;
  c.levels = static_cast<int>(r.u32());
  const std::uint32_t n = r.u32();
  if (n > 64) r.fail("implausible channel list length " + std::to_string(n));
  c.channels.clear();
  for (std::uint32_t i = 0; i < n; ++i) c.channels.push_back(static_cast<int>(r.u32()));
  c.rdb_depth = static_cast<int>(r.u32());
  const std::uint8_t bn = r.u8();
  if (bn > 1) r.fail("bad bn_policy tag " + std::to_string(bn));
  c.bn_policy = bn == 1 ? BnPolicy::kDefault : BnPolicy::kNone;
  return c;
}

std::string channels_str(const std::vector<int>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) s += ",";
    s += std::to_string(v[i]);
  }
  return s + "]";
}

}  // namespace

Checkpoint make_checkpoint(const ModelConfig& config, const ParamStore<float>& ps,
                           const TrainProgress& progress) {
  Checkpoint cp;
  cp.config = config;
  cp.epoch = progress.epoch;
  cp.step = progress.step;
  cp.rng_state = progress.rng_state;
  for (const std::string& name : ps.names()) {
    const ParamEntry<float>& e = ps.at(name);
    Checkpoint::Entry out;
    out.name = name;
    out.trainable = e.trainable;
    out.shape = e.value.shape;
    out.value = e.value.data;
    if (e.trainable) {
      out.m = e.m.data;
      out.v = e.v.data;
    }
    cp.entries.push_back(std::move(out));
  }
  return cp;
}

ParamStore<float> restore_params(const Checkpoint& cp) {
  cp.config.validate();
  ParamStore<float> ps = build<float>(cp.config, 0);
  if (cp.entries.size() != ps.size()) {
    throw std::runtime_error("checkpoint does not match architecture: " +
                             std::to_string(cp.entries.size()) + " stored tensors but the model has " +
                             std::to_string(ps.size()));
  }
  std::size_t seen = 0;
  for (const Checkpoint::Entry& e : cp.entries) {
    if (!ps.has(e.name)) {
      throw std::runtime_error("checkpoint does not match architecture: unexpected tensor '" +
                               e.name + "'");
    }
    ParamEntry<float>& dst = ps.at(e.name);
    if (!(dst.value.shape == e.shape)) {
      throw std::runtime_error("checkpoint tensor '" + e.name + "' has shape " + e.shape.str() +
                               " but the model expects " + dst.value.shape.str());
    }
    if (dst.trainable != e.trainable) {
      throw std::runtime_error("checkpoint tensor '" + e.name + "' trainable flag mismatch");
    }
    if (e.value.size() != dst.value.data.size()) {
      throw std::runtime_error("checkpoint tensor '" + e.name + "' payload size mismatch");
    }
    dst.value.data = e.value;
    if (e.trainable) {
      if (e.m.size() != dst.m.data.size() || e.v.size() != dst.v.data.size()) {
        throw std::runtime_error("checkpoint tensor '" + e.name + "' moment size mismatch");
      }
      dst.m.data = e.m;
      dst.v.data = e.v;
    }
    ++seen;
  }
  if (seen != ps.size()) {
    throw std::runtime_error("checkpoint does not cover every model tensor");
  }
  return ps;
}

void save_checkpoint(const std::string& path, const Checkpoint& cp) {
  Writer w;
  w.buf.insert(w.buf.end(), kMagic, kMagic + 4);
  w.u32(kVersion);
  write_config(w, cp.config);
  w.u64(cp.epoch);
  w.u64(cp.step);
  w.str(cp.rng_state);
  w.u64(cp.entries.size());
  for (const Checkpoint::Entry& e : cp.entries) {
    w.str(e.name);
    w.u8(e.trainable ? 1 : 0);
    w.u64(static_cast<std::uint64_t>(e.shape.n));
    w.u64(static_cast<std::uint64_t>(e.shape.c));
    w.u64(static_cast<std::uint64_t>(e.shape.h));
    w.u64(static_cast<std::uint64_t>(e.shape.w));
    w.floats(e.value);
    w.u8(e.trainable ? 1 : 0);
    if (e.trainable) {
      w.floats(e.m);
      w.floats(e.v);
    }
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(tmp + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw std::runtime_error(tmp + ": write failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw std::runtime_error(path + ": rename failed: " + ec.message());
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  Reader r{bytes, path};
  r.need(8);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) r.fail("not a checkpoint file (bad magic)");
  r.off = 4;
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    r.fail("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint cp;
  cp.config = read_config(r);
  cp.epoch = r.u64();
  cp.step = r.u64();
  cp.rng_state = r.str(std::uint64_t(1) << 20);
  const std::uint64_t n = r.u64();
  if (n > 1 << 20) r.fail("implausible tensor count " + std::to_string(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    Checkpoint::Entry e;
    e.name = r.str(4096);
    e.trainable = r.u8() != 0;
    const std::uint64_t dn = r.u64(), dc = r.u64(), dh = r.u64(), dw = r.u64();
    if (dn < 1 || dc < 1 || dh < 1 || dw < 1 || dn * dc * dh * dw > kMaxElems) {
      r.fail("tensor '" + e.name + "' has implausible shape");
    }
    e.shape = Shape{static_cast<int>(dn), static_cast<int>(dc), static_cast<int>(dh),
                    static_cast<int>(dw)};
    const std::uint64_t numel = dn * dc * dh * dw;
    e.value = r.floats(numel);
    const bool has_moments = r.u8() != 0;
    if (has_moments != e.trainable) r.fail("tensor '" + e.name + "' moment flag mismatch");
    if (has_moments) {
      e.m = r.floats(numel);
      e.v = r.floats(numel);
    }
    cp.entries.push_back(std::move(e));
  }
  if (r.off != bytes.size()) r.fail("trailing bytes after checkpoint payload");
  return cp;
}

std::string config_diff(const ModelConfig& a, const ModelConfig& b) {
  std::vector<std::string> parts;
  if (a.levels != b.levels) {
    parts.push_back("levels: " + std::to_string(a.levels) + " vs " + std::to_string(b.levels));
  }
  if (a.channels != b.channels) {
    parts.push_back("channels: " + channels_str(a.channels) + " vs " + channels_str(b.channels));
  }
  if (a.rdb_depth != b.rdb_depth) {
    parts.push_back("rdb_depth: " + std::to_string(a.rdb_depth) + " vs " +
                    std::to_string(b.rdb_depth));
  }
  if (a.bn_policy != b.bn_policy) {
    auto name = [](BnPolicy p) { return p == BnPolicy::kDefault ? "default" : "none"; };
    parts.push_back(std::string("bn_policy: ") + name(a.bn_policy) + " vs " + name(b.bn_policy));
  }
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += "; ";
    out += parts[i];
  }
  return out;
}

}  // namespace mwrdcnn
