// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "centerlens/tensorio.hpp"
#include "json.hpp"

namespace centerlens::tensorio {

std::string to_string(Placement p) { return p == Placement::kCenter ? "center" : "off-center"; }

Placement parse_placement(const std::string& s) {
  if (s == "center") return Placement::kCenter;
  if (s == "off-center") return Placement::kOffCenter;
  throw DataError("unknown placement '" + s + "' (expected center or off-center)");
}

std::string format_manifest_line(const ManifestEntry& e) {
  nlohmann::ordered_json j;
  j["sample_id"] = e.sample_id;
  j["image_path"] = e.image_path;
  j["class_label"] = e.class_label;
  j["placement"] = to_string(e.placement);
  j["cell_row"] = e.cell_row;
  j["cell_col"] = e.cell_col;
  j["source_set"] = e.source_set;
  j["object_size_s"] = e.object_size_s;
  return j.dump() + "\n";
}

namespace {

ManifestEntry parse_line(const std::string& line, std::size_t line_no) {
  const auto where = "manifest line " + std::to_string(line_no) + ": ";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + "malformed JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw DataError(where + "expected a JSON object");

  auto field = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) throw DataError(where + "missing required field '" + key + "'");
    return j[key];
  };
  ManifestEntry e;
  try {
    e.sample_id = field("sample_id").get<std::string>();
    e.image_path = field("image_path").get<std::string>();
    e.class_label = field("class_label").get<std::string>();
    e.placement = parse_placement(field("placement").get<std::string>());
    e.cell_row = field("cell_row").get<int>();
    e.cell_col = field("cell_col").get<int>();
    e.source_set = field("source_set").get<std::string>();
    e.object_size_s = field("object_size_s").get<int>();
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(where + "field has the wrong type (" + ex.what() + ")");
  } catch (const DataError& ex) {
    const std::string msg = ex.what();
    if (msg.rfind("manifest line", 0) == 0) throw;
    throw DataError(where + msg);
  }
  if (e.sample_id.empty()) throw DataError(where + "empty sample_id");
  if (e.placement == Placement::kCenter && e.cell_row != e.cell_col) {
    throw DataError(where + "center sample must sit on the diagonal anchor");
  }
  return e;
}

}  // namespace

std::vector<ManifestEntry> parse_manifest(std::istream& in) {
  std::vector<ManifestEntry> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto e = parse_line(line, line_no);
    if (!seen.insert(e.sample_id).second) {
      throw DataError("manifest line " + std::to_string(line_no) + ": duplicate sample_id '" +
                      e.sample_id + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in);
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.sample_id).second) {
      throw InvalidArgument("duplicate sample_id '" + e.sample_id + "'");
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& e : entries) out << format_manifest_line(e);
  if (!out) throw IoError("failed writing manifest " + path.string());
}

std::string manifest_digest(const std::vector<ManifestEntry>& entries) {
  std::vector<std::string> lines;
  lines.reserve(entries.size());
  for (const auto& e : entries) lines.push_back(format_manifest_line(e));
  std::sort(lines.begin(), lines.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : lines) {
    for (unsigned char c : l) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace centerlens::tensorio
