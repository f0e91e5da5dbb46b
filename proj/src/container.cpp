#include "nwbrl/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "nwbrl/error.hpp"

namespace nwbrl {
namespace {

static_assert(std::endian::native == std::endian::little,
              "container encoding assumes a little-endian host");

constexpr char kMagic[8] = {'N', 'W', 'B', 'R', 'L', 'C', 'T', 'R'};

template <typename T>
void write_pod(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t limit) : bytes_(b), limit_(limit) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void reals(double* dst, std::size_t n) {
    need(n * sizeof(double));
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    require(pos_ + n <= limit_, ErrorCode::Io, "container truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n, std::uint64_t h) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

const Container::Entry* Container::find(const std::string& name) const {
  for (const Entry& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

void Container::put(const std::string& name, const Matrix& value) {
  require(name.size() < 65536, ErrorCode::InvalidArgument, "container field name too long");
  for (Entry& e : entries_) {
    if (e.name == name) {
      e.payload = value;
      return;
    }
  }
  entries_.push_back(Entry{name, value});
}

void Container::put_text(const std::string& name, const std::string& text) {
  require(name.size() < 65536, ErrorCode::InvalidArgument, "container field name too long");
  for (Entry& e : entries_) {
    if (e.name == name) {
      e.payload = text;
      return;
    }
  }
  entries_.push_back(Entry{name, text});
}

bool Container::has(const std::string& name) const { return find(name) != nullptr; }

const Matrix& Container::get(const std::string& name) const {
  const Entry* e = find(name);
  require(e != nullptr && std::holds_alternative<Matrix>(e->payload), ErrorCode::Io,
          "container has no array field '" + name + "'");
  return std::get<Matrix>(e->payload);
}

const std::string& Container::get_text(const std::string& name) const {
  const Entry* e = find(name);
  require(e != nullptr && std::holds_alternative<std::string>(e->payload), ErrorCode::Io,
          "container has no text field '" + name + "'");
  return std::get<std::string>(e->payload);
}

std::vector<std::string> Container::names() const {
  std::vector<std::string> out;
  for (const Entry& e : entries_) out.push_back(e.name);
  return out;
}

std::vector<std::uint8_t> Container::encode() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  write_pod<std::uint32_t>(out, kContainerVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const Entry& e : entries_) {
    const bool text = std::holds_alternative<std::string>(e.payload);
    write_pod<std::uint8_t>(out, text ? 1 : 0);
    write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    if (text) {
      const auto& s = std::get<std::string>(e.payload);
      write_pod<std::uint64_t>(out, s.size());
      out.insert(out.end(), s.begin(), s.end());
    } else {
      const auto& m = std::get<Matrix>(e.payload);
      write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
      write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
      const auto* p = reinterpret_cast<const std::uint8_t*>(m.data());
      out.insert(out.end(), p, p + m.size() * sizeof(double));
    }
  }
  write_pod<std::uint64_t>(out, fnv1a64(out.data(), out.size()));
  return out;
}

Container Container::decode(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= sizeof(kMagic) + 16, ErrorCode::Io, "container too short");
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  require(std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) == 0, ErrorCode::Io,
          "not a container (bad magic)");
  require(fnv1a64(bytes.data(), body) == stored, ErrorCode::ChecksumMismatch,
          "container checksum mismatch");
  Reader r(bytes, body);
  r.str(sizeof(kMagic));
  const auto version = r.pod<std::uint32_t>();
  require(version == kContainerVersion, ErrorCode::Io,
          "unsupported container version " + std::to_string(version));
  const auto count = r.pod<std::uint32_t>();
  Container c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto kind = r.pod<std::uint8_t>();
    const auto len = r.pod<std::uint16_t>();
    std::string name = r.str(len);
    if (kind == 1) {
      const auto n = r.pod<std::uint64_t>();
      c.entries_.push_back(Entry{std::move(name), r.str(n)});
    } else {
      require(kind == 0, ErrorCode::Io, "unknown container entry kind");
      const auto rows = r.pod<std::uint64_t>();
      const auto cols = r.pod<std::uint64_t>();
      require(rows < (1ULL << 32) && cols < (1ULL << 32), ErrorCode::Io,
              "container array too large");
      Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
      r.reals(m.data(), rows * cols);
      c.entries_.push_back(Entry{std::move(name), std::move(m)});
    }
  }
  require(r.pos() == body, ErrorCode::Io, "trailing bytes in container");
  return c;
}

void Container::save(const std::filesystem::path& path) const {
  const auto bytes = encode();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorCode::Io, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(f), ErrorCode::Io, "failed writing " + path.string());
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode(bytes);
}

void put_belief(Container& c, const std::string& prefix, const NWBelief& b) {
  Matrix dims(1, 2);
  dims << static_cast<double>(b.dim()), static_cast<double>(b.out_dim());
  c.put(prefix + "dims", dims);
  c.put(prefix + "M", b.M);
  c.put(prefix + "Xi", b.Xi);
  c.put(prefix + "XiInv", b.XiInv);
  c.put(prefix + "Omega", b.Omega);
  c.put(prefix + "nu", Matrix::Constant(1, 1, b.nu));
}

NWBelief get_belief(const Container& c, const std::string& prefix) {
  NWBelief b;
  const Matrix& dims = c.get(prefix + "dims");
  b.M = c.get(prefix + "M");
  b.Xi = c.get(prefix + "Xi");
  b.XiInv = c.get(prefix + "XiInv");
  b.Omega = c.get(prefix + "Omega");
  b.nu = c.get(prefix + "nu")(0, 0);
  require(dims.size() == 2 && dims(0, 0) == static_cast<double>(b.M.rows()) &&
              dims(0, 1) == static_cast<double>(b.M.cols()),
          ErrorCode::Io, "belief dims field disagrees with stored arrays");
  validate(b);
  return b;
}

}  // namespace nwbrl
