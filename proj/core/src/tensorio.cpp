// SPDX-License-Identifier: Apache-2.0
#include "centerlens/tensorio.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <istream>
#include <iterator>
#include <limits>
#include <numeric>
#include <ostream>

#include "json.hpp"

namespace centerlens::tensorio {

using ordered_json = nlohmann::ordered_json;

std::int64_t Tensor::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

namespace {

void validate_tensor(const std::string& name, const Tensor& t) {
  if (name.empty()) throw InvalidArgument("tensor name must be non-empty");
  for (auto d : t.shape) {
    if (d < 0) throw InvalidArgument("tensor '" + name + "' has a negative dimension");
  }
  if (t.element_count() != static_cast<std::int64_t>(t.data.size())) {
    throw InvalidArgument("tensor '" + name + "': shape product " +
                          std::to_string(t.element_count()) + " != element count " +
                          std::to_string(t.data.size()));
  }
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> b) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

float get_f32(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<float>(bits);
}

}  // namespace

void TensorBundle::add(const std::string& name, std::vector<std::int64_t> shape,
                       std::vector<float> data) {
  add(name, Tensor{std::move(shape), std::move(data)});
}

void TensorBundle::add(const std::string& name, Tensor tensor) {
  validate_tensor(name, tensor);
  if (entries_.contains(name)) throw InvalidArgument("duplicate tensor name '" + name + "'");
  entries_.emplace(name, std::move(tensor));
}

void TensorBundle::set(const std::string& name, Tensor tensor) {
  validate_tensor(name, tensor);
  entries_.insert_or_assign(name, std::move(tensor));
}

const Tensor& TensorBundle::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw DataError("bundle has no tensor named '" + name + "'");
  return it->second;
}

const Tensor* TensorBundle::find(const std::string& name) const {
  auto it = entries_.find(name);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<std::uint8_t> encode_bundle(const TensorBundle& bundle) {
  ordered_json entries = ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : bundle.entries()) {
    validate_tensor(name, t);
    const std::uint64_t length = t.data.size() * sizeof(float);
    ordered_json e;
    e["name"] = name;
    e["dtype"] = "f32";
    e["shape"] = t.shape;
    e["byte_offset"] = offset;
    e["byte_length"] = length;
    entries.push_back(std::move(e));
    offset += length;
  }
  ordered_json header;
  header["entries"] = std::move(entries);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kPrefixSize + text.size() + offset);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(kFormatVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, t] : bundle.entries()) {
    for (float f : t.data) put_f32(out, f);
  }
  return out;
}

std::uint64_t write_bundle(const TensorBundle& bundle, std::ostream& sink) {
  const auto bytes = encode_bundle(bundle);
  sink.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!sink) throw IoError("failed writing bundle");
  return bytes.size();
}

TensorBundle decode_bundle(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError("not a bundle: missing CBLT magic");
  }
  if (bytes.size() < kPrefixSize) throw FormatError("corrupt: truncated prefix");
  if (bytes[4] != kFormatVersion) {
    throw FormatError("version: unsupported format version " + std::to_string(bytes[4]));
  }
  const std::uint64_t header_len = get_u64(bytes.subspan(5, 8));
  if (header_len > bytes.size() - kPrefixSize) throw FormatError("corrupt: header exceeds stream");

  const auto header_bytes = bytes.subspan(kPrefixSize, header_len);
  const auto data = bytes.subspan(kPrefixSize + header_len);

  ordered_json header;
  try {
    header = ordered_json::parse(header_bytes.begin(), header_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt: header is not valid JSON: ") + e.what());
  }

  struct Span {
    std::uint64_t begin, end;
    std::string name;
  };
  std::vector<Span> spans;
  TensorBundle bundle;
  try {
    if (!header.is_object() || !header.contains("entries") || !header["entries"].is_array()) {
      throw FormatError("corrupt: header lacks an entries array");
    }
    for (const auto& e : header["entries"]) {
      const auto name = e.at("name").get<std::string>();
      if (e.at("dtype").get<std::string>() != "f32") {
        throw FormatError("corrupt: tensor '" + name + "' has unsupported dtype");
      }
      const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = e.at("byte_offset").get<std::uint64_t>();
      const auto length = e.at("byte_length").get<std::uint64_t>();
      Tensor t{shape, {}};
      if (std::any_of(shape.begin(), shape.end(), [](auto d) { return d < 0; })) {
        throw FormatError("corrupt: tensor '" + name + "' has a negative dimension");
      }
      const auto count = static_cast<std::uint64_t>(t.element_count());
      if (length != count * sizeof(float)) {
        throw FormatError("corrupt: tensor '" + name + "' byte_length disagrees with shape");
      }
      if (offset > data.size() || length > data.size() - offset) {
        throw FormatError("corrupt: tensor '" + name + "' extends past end of stream");
      }
      t.data.resize(count);
      for (std::uint64_t i = 0; i < count; ++i) t.data[i] = get_f32(data.data() + offset + 4 * i);
      if (bundle.contains(name) || name.empty()) {
        throw FormatError("corrupt: empty or duplicate tensor name '" + name + "'");
      }
      bundle.add(name, std::move(t));
      spans.push_back({offset, offset + length, name});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt: malformed header entry: ") + e.what());
  }

  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.begin < b.begin; });
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].begin < spans[i - 1].end) {
      throw FormatError("corrupt: tensors '" + spans[i - 1].name + "' and '" + spans[i].name +
                        "' overlap");
    }
  }
  return bundle;
}

TensorBundle read_bundle(std::istream& source) {
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(source),
                                  std::istreambuf_iterator<char>()};
  return decode_bundle(bytes);
}

void write_bundle_file(const TensorBundle& bundle, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_bundle(bundle, out);
}

TensorBundle read_bundle_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open bundle " + path.string());
  return read_bundle(in);
}

std::filesystem::path names_sidecar_path(const std::filesystem::path& bundle_path) {
  auto p = bundle_path;
  p.replace_extension(".names.json");
  return p;
}

void write_names(const std::vector<std::string>& names, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << nlohmann::json(names).dump(1) << '\n';
}

std::vector<std::string> read_names(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open names file " + path.string());
  try {
    return nlohmann::json::parse(in).get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("names file " + path.string() + " is not a JSON string array: " + e.what());
  }
}

}  // namespace centerlens::tensorio
