#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pdgr {

/// Line-oriented "key = value" text with "[section]" headers. '#' starts a
/// comment. Keys before the first header belong to the unnamed section "".
struct KvSection {
  std::string name;
  int line = 0;
  std::vector<std::pair<std::string, std::string>> entries;
  std::vector<int> entry_lines;

  std::optional<std::string> find(std::string_view key) const;
};

struct KvDocument {
  std::string source;  // file name for error messages
  std::vector<KvSection> sections;

  const KvSection* section(std::string_view name) const;

  std::string get(const KvSection& s, std::string_view key, std::string_view fallback) const;
  double get_double(const KvSection& s, std::string_view key, double fallback) const;
  long long get_int(const KvSection& s, std::string_view key, long long fallback) const;
  std::vector<std::string> get_list(const KvSection& s, std::string_view key,
                                    std::vector<std::string> fallback) const;
};

/// Throws ParseError naming source and line.
KvDocument parse_kv(std::istream& in, std::string source);
KvDocument load_kv(const std::filesystem::path& path);

std::string trim(std::string_view s);
/// Splits on commas and/or whitespace, dropping empties.
std::vector<std::string> split_list(std::string_view s);

}  // namespace pdgr
