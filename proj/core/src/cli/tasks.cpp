#include "slab/cli/tasks.hpp"

#include "json.hpp"

#include "slab/error.hpp"
#include "slab/util/io.hpp"

namespace slab {

using nlohmann::json;

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kMultilabel: return "multilabel";
    case TaskKind::kHierBinary: return "hierarchical-binary";
    case TaskKind::kHierMultilabel: return "hierarchical-multilabel";
    case TaskKind::kNer: return "ner";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view text) {
  for (TaskKind k : {TaskKind::kMultilabel, TaskKind::kHierBinary, TaskKind::kHierMultilabel, TaskKind::kNer})
    if (to_string(k) == text) return k;
  fail(ErrorCode::kInvalidArgument, "unknown task type '" + std::string(text) +
                                        "' (expected multilabel, hierarchical-binary, hierarchical-multilabel or ner)");
}

namespace {

json parse_object(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, std::string("task record: ") + e.what());
  }
  require(j.is_object(), ErrorCode::kParse, "task record: expected a JSON object");
  return j;
}

template <class T>
T field(const json& j, const char* name) {
  require(j.contains(name), ErrorCode::kParse, std::string("task record: missing field '") + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, std::string("task record: field '") + name + "': " + e.what());
  }
}

}  // namespace

std::string emit_record(const TextRecord& r) {
  return json{{"id", r.id}, {"text", r.text}, {"labels", r.labels}}.dump();
}
std::string emit_record(const HierRecord& r) {
  return json{{"id", r.id}, {"facts", r.facts}, {"labels", r.labels}}.dump();
}
std::string emit_record(const NerRecord& r) {
  return json{{"id", r.id}, {"tokens", r.tokens}, {"tags", r.tags}}.dump();
}

TextRecord parse_text_record(std::string_view line) {
  const json j = parse_object(line);
  return {field<std::string>(j, "id"), field<std::string>(j, "text"), field<std::vector<std::string>>(j, "labels")};
}

HierRecord parse_hier_record(std::string_view line) {
  const json j = parse_object(line);
  HierRecord r{field<std::string>(j, "id"), field<std::vector<std::string>>(j, "facts"),
               field<std::vector<std::string>>(j, "labels")};
  require(!r.facts.empty(), ErrorCode::kParse, "hierarchical record " + r.id + " has no facts");
  return r;
}

NerRecord parse_ner_record(std::string_view line) {
  const json j = parse_object(line);
  NerRecord r{field<std::string>(j, "id"), field<std::vector<std::string>>(j, "tokens"),
              field<std::vector<std::string>>(j, "tags")};
  require(r.tokens.size() == r.tags.size(), ErrorCode::kParse,
          "ner record " + r.id + ": " + std::to_string(r.tokens.size()) + " tokens but " +
              std::to_string(r.tags.size()) + " tags");
  return r;
}

namespace {
TextRecord parse_any(std::string_view line, TextRecord*) { return parse_text_record(line); }
HierRecord parse_any(std::string_view line, HierRecord*) { return parse_hier_record(line); }
NerRecord parse_any(std::string_view line, NerRecord*) { return parse_ner_record(line); }
}  // namespace

template <class Record>
std::vector<Record> read_records(const std::filesystem::path& path) {
  std::vector<Record> out;
  std::size_t lineno = 0;
  for (const std::string& line : read_lines(path)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_any(line, static_cast<Record*>(nullptr)));
    } catch (const Error& e) {
      fail(e.code(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

template <class Record>
void write_records(const std::filesystem::path& path, const std::vector<Record>& records) {
  std::string text;
  for (const Record& r : records) {
    text += emit_record(r);
    text += '\n';
  }
  write_file_atomic(path, text);
}

std::filesystem::path split_path(const std::filesystem::path& stem, std::string_view split) {
  std::filesystem::path p = stem;
  p += ".";
  p += std::string(split);
  p += ".jsonl";
  return p;
}

template <class Record>
Splits<Record> read_splits(const std::filesystem::path& stem) {
  return {read_records<Record>(split_path(stem, "train")), read_records<Record>(split_path(stem, "dev")),
          read_records<Record>(split_path(stem, "test"))};
}

template <class Record>
void write_splits(const std::filesystem::path& stem, const Splits<Record>& splits) {
  write_records(split_path(stem, "train"), splits.train);
  write_records(split_path(stem, "dev"), splits.dev);
  write_records(split_path(stem, "test"), splits.test);
}

#define SLAB_INSTANTIATE_RECORD(R)                                                 \
  template std::vector<R> read_records<R>(const std::filesystem::path&);           \
  template void write_records<R>(const std::filesystem::path&, const std::vector<R>&); \
  template Splits<R> read_splits<R>(const std::filesystem::path&);                 \
  template void write_splits<R>(const std::filesystem::path&, const Splits<R>&);

SLAB_INSTANTIATE_RECORD(TextRecord)
SLAB_INSTANTIATE_RECORD(HierRecord)
SLAB_INSTANTIATE_RECORD(NerRecord)

}  // namespace slab
