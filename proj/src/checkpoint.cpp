#include "pdgn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pdgn {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[8] = {'P', 'D', 'G', 'N', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void read_into(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    }
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

void put_name(std::string& out, std::uint8_t kind, const std::string& name) {
  put<std::uint8_t>(out, kind);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
}

}  // namespace

std::string Checkpoint::serialize() const {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, arrays.size() + texts.size());
  for (const auto& [name, m] : arrays) {
    put_name(out, 0, name);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.append(reinterpret_cast<const char*>(m.data()),
               static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  for (const auto& [name, t] : texts) {
    put_name(out, 1, name);
    put<std::uint64_t>(out, t.size());
    out += t;
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto kind = r.get<std::uint8_t>();
    const auto len = r.get<std::uint32_t>();
    std::string name = r.take(len);
    if (kind == 0) {
      const auto rows = r.get<std::uint64_t>();
      const auto cols = r.get<std::uint64_t>();
      if (cols != 0 && rows > (bytes.size() / sizeof(double)) / cols) {
        throw FormatError("checkpoint array '" + name + "' larger than file");
      }
      ad::Matrix m(static_cast<ad::Index>(rows), static_cast<ad::Index>(cols));
      r.read_into(m.data(), static_cast<std::size_t>(rows * cols) * sizeof(double));
      ck.arrays.emplace(std::move(name), std::move(m));
    } else if (kind == 1) {
      const auto n = r.get<std::uint64_t>();
      ck.texts.emplace(std::move(name), r.take(static_cast<std::size_t>(n)));
    } else {
      throw FormatError("unknown entry kind " + std::to_string(kind) + " at byte " +
                        std::to_string(r.pos()));
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint entries");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const std::string bytes = serialize();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize(ss.str());
}

const ad::Matrix& Checkpoint::array(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw FormatError("checkpoint has no array '" + name + "'");
  return it->second;
}

const std::string& Checkpoint::text(const std::string& name) const {
  auto it = texts.find(name);
  if (it == texts.end()) throw FormatError("checkpoint has no entry '" + name + "'");
  return it->second;
}

}  // namespace pdgn
