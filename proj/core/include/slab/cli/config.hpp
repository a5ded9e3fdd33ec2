#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace slab {

struct KeySpec {
  std::string name;
  std::string default_value;
  std::string help;
};

// Every setting any subcommand reads, sorted by name.
const std::vector<KeySpec>& config_keys();
const KeySpec* find_key(std::string_view name);

// Value parsers shared by RunConfig and list items; errors name `key`.
std::int64_t parse_integer(const std::string& key, const std::string& value);
std::size_t parse_count(const std::string& key, const std::string& value);
double parse_number(const std::string& key, const std::string& value);

// Flat key -> value settings. Values start at the built-in defaults and are
// overridden by a config file, then by command-line flags.
class RunConfig {
 public:
  RunConfig();

  // kInvalidArgument for a key not in config_keys().
  void set(const std::string& key, std::string value, std::string origin = "flag");

  // key = value lines; '#' starts a comment; blank lines ignored. Throws kParse
  // for a line without '=', kInvalidArgument for an unknown key (both with the
  // line number), kIo when the file cannot be read.
  void merge_file(const std::filesystem::path& path);

  const std::string& text(const std::string& key) const;
  bool empty(const std::string& key) const { return text(key).empty(); }
  std::int64_t integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;  // non-negative integer
  double number(const std::string& key) const;
  bool flag(const std::string& key) const;          // true/false, 1/0, yes/no, on/off
  std::vector<std::string> list(const std::string& key) const;  // comma-separated, trimmed, empties dropped
  std::filesystem::path path(const std::string& key) const;
  const std::string& origin(const std::string& key) const;

  // "key=value" lines for `keys`, sorted; readable back by merge_file.
  std::string echo(std::span<const std::string> keys) const;

 private:
  struct Entry {
    std::string value;
    std::string origin;
  };
  const Entry& entry(const std::string& key) const;
  std::map<std::string, Entry, std::less<>> values_;
};

}  // namespace slab
