#include "pdgr/data/kv.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>

#include "pdgr/numerics/errors.hpp"

namespace pdgr {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::optional<std::string> KvSection::find(std::string_view key) const {
  for (const auto& [k, v] : entries) {
    if (k == key) return v;
  }
  return std::nullopt;
}

const KvSection* KvDocument::section(std::string_view name) const {
  for (const auto& s : sections) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

namespace {

int line_of(const KvSection& s, std::string_view key) {
  for (std::size_t i = 0; i < s.entries.size(); ++i) {
    if (s.entries[i].first == key) return s.entry_lines[i];
  }
  return s.line;
}

}  // namespace

std::string KvDocument::get(const KvSection& s, std::string_view key, std::string_view fallback) const {
  auto v = s.find(key);
  return v ? *v : std::string(fallback);
}

double KvDocument::get_double(const KvSection& s, std::string_view key, double fallback) const {
  auto v = s.find(key);
  if (!v) return fallback;
  double out = 0.0;
  const char* end = v->data() + v->size();
  auto [p, ec] = std::from_chars(v->data(), end, out);
  if (ec != std::errc() || p != end) {
    throw ParseError(source + ":" + std::to_string(line_of(s, key)) + ": '" + std::string(key) +
                     "' expects a number, got '" + *v + "'");
  }
  return out;
}

long long KvDocument::get_int(const KvSection& s, std::string_view key, long long fallback) const {
  auto v = s.find(key);
  if (!v) return fallback;
  long long out = 0;
  const char* end = v->data() + v->size();
  auto [p, ec] = std::from_chars(v->data(), end, out);
  if (ec != std::errc() || p != end) {
    throw ParseError(source + ":" + std::to_string(line_of(s, key)) + ": '" + std::string(key) +
                     "' expects an integer, got '" + *v + "'");
  }
  return out;
}

std::vector<std::string> KvDocument::get_list(const KvSection& s, std::string_view key,
                                              std::vector<std::string> fallback) const {
  auto v = s.find(key);
  return v ? split_list(*v) : fallback;
}

KvDocument parse_kv(std::istream& in, std::string source) {
  KvDocument doc;
  doc.source = std::move(source);
  doc.sections.push_back(KvSection{"", 0, {}, {}});
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? std::string_view(raw)
                                                            : std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(doc.source + ":" + std::to_string(lineno) + ": unterminated section header");
      doc.sections.push_back(KvSection{trim(std::string_view(line).substr(1, line.size() - 2)), lineno, {}, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(doc.source + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    }
    std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ParseError(doc.source + ":" + std::to_string(lineno) + ": empty key");
    auto& sec = doc.sections.back();
    if (sec.find(key)) {
      throw ParseError(doc.source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    sec.entries.emplace_back(std::move(key), trim(std::string_view(line).substr(eq + 1)));
    sec.entry_lines.push_back(lineno);
  }
  return doc;
}

KvDocument load_kv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_kv(in, path.string());
}

}  // namespace pdgr
