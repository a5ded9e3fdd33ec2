#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace slab {

enum class TaskKind { kMultilabel, kHierBinary, kHierMultilabel, kNer };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view text);

// One record per line in every task file.
struct TextRecord {
  std::string id;
  std::string text;
  std::vector<std::string> labels;
  bool operator==(const TextRecord&) const = default;
};

// Binary tasks carry a single label name when positive and none otherwise.
struct HierRecord {
  std::string id;
  std::vector<std::string> facts;
  std::vector<std::string> labels;
  bool operator==(const HierRecord&) const = default;
};

struct NerRecord {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<std::string> tags;
  bool operator==(const NerRecord&) const = default;
};

std::string emit_record(const TextRecord& r);
std::string emit_record(const HierRecord& r);
std::string emit_record(const NerRecord& r);

TextRecord parse_text_record(std::string_view line);
HierRecord parse_hier_record(std::string_view line);
NerRecord parse_ner_record(std::string_view line);

template <class Record>
std::vector<Record> read_records(const std::filesystem::path& path);

template <class Record>
void write_records(const std::filesystem::path& path, const std::vector<Record>& records);

template <class Record>
struct Splits {
  std::vector<Record> train;
  std::vector<Record> dev;
  std::vector<Record> test;
};

// <stem>.train.jsonl, <stem>.dev.jsonl, <stem>.test.jsonl
std::filesystem::path split_path(const std::filesystem::path& stem, std::string_view split);

template <class Record>
Splits<Record> read_splits(const std::filesystem::path& stem);

template <class Record>
void write_splits(const std::filesystem::path& stem, const Splits<Record>& splits);

}  // namespace slab
