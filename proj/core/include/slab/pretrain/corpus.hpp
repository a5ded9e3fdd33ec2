#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace slab {

// One manifest line: {"name", "source", "hash", "domain", "size"}. source is
// a path (relative paths resolve against the manifest's directory) or an
// http(s) URL. hash (SHA-256 hex) and size are optional.
struct ManifestEntry {
  std::string name;
  std::string source;
  std::string hash;
  std::string domain;
  std::uint64_t expected_size = 0;
};

// Throws kParse on malformed lines, kInvalidArgument on duplicate names.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

struct Document {
  std::string id;
  std::string domain;
  std::string text;
  bool operator==(const Document&) const = default;
};

struct SourceStats {
  std::string name;
  std::string domain;
  std::size_t docs = 0;
  std::size_t bytes = 0;
  double share = 0.0;  // percent of all ingested bytes
};

struct IngestReport {
  std::vector<SourceStats> sources;  // manifest order
  std::vector<SourceStats> domains;  // sorted by domain name; name == domain
  std::size_t total_docs = 0;
  std::size_t total_bytes = 0;

  // name,domain,docs,bytes,share_pct with a trailing TOTAL row.
  std::string sources_csv() const;
  // domain,docs,bytes,share_pct
  std::string domains_csv() const;
};

// Fetches a source's raw bytes: http(s) GET or a file read. Throws
// kUnreachable when it cannot be obtained.
std::string fetch_source(const std::string& source, const std::filesystem::path& base_dir);

// Resolves and verifies every entry before writing anything, then writes the
// document store (one JSON record per line) and returns per-source and
// per-domain counts. Each non-blank source line is one document, normalized
// to single spaces. Errors: kUnreachable, kHashMismatch (naming the entry),
// kEmptyInput when no documents result.
IngestReport ingest(const std::vector<ManifestEntry>& manifest, const std::filesystem::path& base_dir,
                    const std::filesystem::path& store_path);

std::vector<Document> read_store(const std::filesystem::path& path);
void write_store(const std::filesystem::path& path, const std::vector<Document>& docs);

}  // namespace slab
