#include "poseforge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "poseforge/errors.hpp"

namespace poseforge {
namespace {

constexpr char kMagic[4] = {'P', 'F', 'C', 'K'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf.insert(buf.end(), c, c + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  std::vector<unsigned char> buf;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& b, std::size_t end, std::string path)
      : buf_(b), end_(end), path_(std::move(path)) {}

  void need(std::size_t n) const {
    if (pos_ + n > end_) throw DataError("checkpoint " + path_ + " is truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] std::size_t pos() const { return pos_; }

 private:
  const std::vector<unsigned char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string path_;
};

std::uint32_t crc_of(const unsigned char* p, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), p, static_cast<uInt>(n)));
}

}  // namespace

void Checkpoint::add_all(const ParamList& params) {
  for (const auto& p : params) add(p.name, p.tensor);
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : blocks) {
    if (n == name) return &t;
  }
  return nullptr;
}

const std::string& Checkpoint::meta(const std::string& key) const {
  const auto it = metadata.find(key);
  if (it == metadata.end()) throw StateError("checkpoint has no '" + key + "' entry");
  return it->second;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.blocks.size()));
  for (const auto& [name, t] : ckpt.blocks) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (const auto d : t.shape()) w.u64(d);
    for (const double v : t.values()) w.f64(v);
  }
  w.u32(crc_of(w.buf.data(), w.buf.size()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StateError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw StateError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("checkpoint " + path.string() + " does not exist or cannot be read");
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (buf.size() < 16) throw DataError("checkpoint " + name + " is truncated");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) throw DataError(name + " is not a checkpoint (bad magic)");

  const std::size_t body = buf.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(buf[body + i]) << (8 * i);
  if (stored != crc_of(buf.data(), body)) throw DataError("checkpoint " + name + " fails its checksum");

  Reader r(buf, body, name);
  (void)r.u32();  // magic
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint " + name + " has format version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  }
  Checkpoint ckpt;
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    ckpt.metadata[k] = r.str();
  }
  const std::uint32_t n_blocks = r.u32();
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    std::string block = r.str();
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    const std::size_t n = numel(shape);
    r.need(n * 8);
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    ckpt.blocks.emplace_back(std::move(block), Tensor::from_data(std::move(shape), std::move(values)));
  }
  if (r.pos() != body) throw DataError("checkpoint " + name + " has trailing bytes");
  return ckpt;
}

void restore(const Checkpoint& ckpt, const ParamList& params) {
  for (const auto& p : params) {
    const Tensor* src = ckpt.find(p.name);
    if (src == nullptr) throw StateError("checkpoint lacks tensor '" + p.name + "'");
    if (src->shape() != p.tensor.shape()) {
      throw StateError("checkpoint tensor '" + p.name + "' has shape " + to_string(src->shape()) + ", model expects " +
                       to_string(p.tensor.shape()));
    }
    Tensor dst = p.tensor;
    std::copy(src->values().begin(), src->values().end(), dst.mutable_data().begin());
  }
}

}  // namespace poseforge
