#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "nwbrl/conjugate.hpp"
#include "nwbrl/linalg.hpp"

namespace nwbrl {

/// Named-field binary container shared by beliefs, model checkpoints and
/// policy checkpoints.
///
/// Layout (all integers and reals little-endian):
///   magic      8 bytes  "NWBRLCTR"
///   version    u32      kContainerVersion
///   count      u32      number of entries
///   entry*     u8 kind (0 = real array, 1 = text), u16 name length, name bytes,
///              then for arrays: u64 rows, u64 cols, rows*cols f64 row-major;
///              for text: u64 length, bytes
///   checksum   u64      FNV-1a over every preceding byte
class Container {
 public:
  static constexpr std::uint32_t kContainerVersion = 1;

  void put(const std::string& name, const Matrix& value);
  void put_text(const std::string& name, const std::string& text);

  bool has(const std::string& name) const;
  const Matrix& get(const std::string& name) const;
  const std::string& get_text(const std::string& name) const;
  std::vector<std::string> names() const;

  std::vector<std::uint8_t> encode() const;
  static Container decode(const std::vector<std::uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

 private:
  struct Entry {
    std::string name;
    std::variant<Matrix, std::string> payload;
  };
  const Entry* find(const std::string& name) const;
  std::vector<Entry> entries_;
};

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n,
                      std::uint64_t h = 0xcbf29ce484222325ULL);

/// Stores M, Xi, XiInv, Omega, nu and dims under `prefix`.
void put_belief(Container& c, const std::string& prefix, const NWBelief& b);
NWBelief get_belief(const Container& c, const std::string& prefix);

}  // namespace nwbrl
