// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#ifndef DAGGER_KVCONFIG_HPP
#define DAGGER_KVCONFIG_HPP

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dagger {

/// One `[name]` block of a key-value document. Keys before the first
/// header land in a section with an empty name.
struct KvSection {
  std::string name;
  int line = 0;
  std::vector<std::pair<std::string, std::string>> entries;

  std::optional<std::string> get(std::string_view key) const;
  bool has(std::string_view key) const { return get(key).has_value(); }
};

/// Parses `key = value` lines grouped under `[section]` headers.
/// `#` and `;` start comments. Throws ConfigError with the line number on
/// malformed input or duplicate keys within a section.
std::vector<KvSection> parse_kv(std::string_view text);

std::string read_text_file(const std::string& path);

/// Strict conversions; throw ConfigError naming `what` on failure.
int kv_to_int(const std::string& s, const std::string& what);
double kv_to_double(const std::string& s, const std::string& what);
bool kv_to_bool(const std::string& s, const std::string& what);
std::vector<std::string> kv_split(const std::string& s, char sep);

std::string trim(std::string_view s);

}  // namespace dagger

#endif  // DAGGER_KVCONFIG_HPP
