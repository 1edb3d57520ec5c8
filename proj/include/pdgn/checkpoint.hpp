#pragma once

// Versioned binary container of named float64 arrays and text blobs.
//
// Layout (little-endian):
//   magic "PDGNCKPT" | u32 version | u64 entry count |
//   per entry: u8 kind | u32 name length | name bytes |
//     kind 0 (array): u64 rows | u64 cols | rows*cols f64, row-major
//     kind 1 (text):  u64 length | bytes
// Entries are written in name order, so equal contents give equal files.

#include "pdgn/tensor.hpp"

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

namespace pdgn {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, ad::Matrix> arrays;
  std::map<std::string, std::string> texts;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);

  const ad::Matrix& array(const std::string& name) const;
  const std::string& text(const std::string& name) const;
};

}  // namespace pdgn
