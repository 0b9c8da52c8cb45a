// SPDX-License-Identifier: Apache-2.0
//
// `.cblt` tensor bundles and `.jsonl` sample manifests.
//
// Bundle layout (all integers little-endian):
//
//   offset 0   4 bytes   magic "CBLT"
//   offset 4   1 byte    format version (1)
//   offset 5   8 bytes   header length H (unsigned)
//   offset 13  H bytes   UTF-8 JSON header
//   offset 13+H          data section: raw f32 blobs
//
// The header is {"entries":[{"name","dtype","shape","byte_offset",
// "byte_length"}, ...]} with entries sorted by name; byte_offset is relative
// to the start of the data section.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "centerlens/error.hpp"

namespace centerlens::tensorio {

inline constexpr char kMagic[4] = {'C', 'B', 'L', 'T'};
inline constexpr std::uint8_t kFormatVersion = 1;
inline constexpr std::size_t kPrefixSize = 13;

/// Raised for any malformed bundle; what() starts with one of
/// "not a bundle", "version" or "corrupt".
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t element_count() const;
  std::int64_t dim(std::size_t i) const { return shape.at(i); }
  bool operator==(const Tensor&) const = default;
};

/// Named f32 tensors. Names are unique and non-empty; every tensor's shape
/// product equals its element count.
class TensorBundle {
 public:
  /// Inserts a tensor; rejects empty/duplicate names and shape/data mismatch.
  void add(const std::string& name, std::vector<std::int64_t> shape, std::vector<float> data);
  void add(const std::string& name, Tensor tensor);
  /// Inserts or replaces.
  void set(const std::string& name, Tensor tensor);

  bool contains(const std::string& name) const { return entries_.contains(name); }
  const Tensor& get(const std::string& name) const;
  const Tensor* find(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const std::map<std::string, Tensor>& entries() const { return entries_; }

  bool operator==(const TensorBundle&) const = default;

 private:
  std::map<std::string, Tensor> entries_;
};

/// Serializes canonically; returns the number of bytes written.
std::uint64_t write_bundle(const TensorBundle& bundle, std::ostream& sink);
TensorBundle read_bundle(std::istream& source);

std::vector<std::uint8_t> encode_bundle(const TensorBundle& bundle);
TensorBundle decode_bundle(std::span<const std::uint8_t> bytes);

void write_bundle_file(const TensorBundle& bundle, const std::filesystem::path& path);
TensorBundle read_bundle_file(const std::filesystem::path& path);

/// Row labels that travel next to a bundle: `foo.cblt` -> `foo.names.json`.
std::filesystem::path names_sidecar_path(const std::filesystem::path& bundle_path);
void write_names(const std::vector<std::string>& names, const std::filesystem::path& path);
std::vector<std::string> read_names(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifests

enum class Placement { kCenter, kOffCenter };

std::string to_string(Placement p);
Placement parse_placement(const std::string& s);

struct ManifestEntry {
  std::string sample_id;
  std::string image_path;  // relative to the manifest's directory
  std::string class_label;
  Placement placement = Placement::kCenter;
  int cell_row = -1;  // anchor cell of the object block, -1 if not a grid sample
  int cell_col = -1;
  std::string source_set;
  int object_size_s = 0;

  bool operator==(const ManifestEntry&) const = default;
};

/// One canonical JSON object per line, trailing newline after each line.
std::string format_manifest_line(const ManifestEntry& entry);

/// Parses JSONL text; errors name the 1-based line number. Blank lines are
/// skipped. Rejects duplicate sample ids.
std::vector<ManifestEntry> parse_manifest(std::istream& in);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

/// FNV-1a over the sorted canonical lines; identifies a manifest
/// independent of line order.
std::string manifest_digest(const std::vector<ManifestEntry>& entries);

}  // namespace centerlens::tensorio

