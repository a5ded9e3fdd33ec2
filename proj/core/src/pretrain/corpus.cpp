#include "slab/pretrain/corpus.hpp"

#include <map>
#include <set>

#include "httplib.h"
#include "json.hpp"
#include "slab/error.hpp"
#include "slab/util/hash.hpp"
#include "slab/util/io.hpp"

namespace slab {

using nlohmann::json;

namespace {

std::string collapse_spaces(std::string_view text) {
  std::string out;
  bool pending = false;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v') {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fetch_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string origin = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
  httplib::Client client(origin);
  client.set_follow_location(true);
  client.set_connection_timeout(10);
  client.set_read_timeout(60);
  auto res = client.Get(path);
  require(static_cast<bool>(res), ErrorCode::kUnreachable,
          "cannot fetch " + url + ": " + httplib::to_string(res.error()));
  require(res->status == 200, ErrorCode::kUnreachable,
          "cannot fetch " + url + ": HTTP status " + std::to_string(res->status));
  return res->body;
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::vector<ManifestEntry> entries;
  std::set<std::string> names;
  std::size_t lineno = 0;
  for (const std::string& line : read_lines(path)) {
    ++lineno;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    ManifestEntry e;
    try {
      const json j = json::parse(line);
      e.name = j.at("name").get<std::string>();
      e.source = j.at("source").get<std::string>();
      e.domain = j.at("domain").get<std::string>();
      if (j.contains("hash") && !j.at("hash").is_null()) e.hash = j.at("hash").get<std::string>();
      if (j.contains("size") && !j.at("size").is_null()) e.expected_size = j.at("size").get<std::uint64_t>();
    } catch (const json::exception& ex) {
      fail(ErrorCode::kParse, where + ": " + ex.what());
    }
    require(!e.name.empty() && !e.source.empty() && !e.domain.empty(), ErrorCode::kParse,
            where + ": name, source and domain must be non-empty");
    require(names.insert(e.name).second, ErrorCode::kInvalidArgument,
            where + ": duplicate manifest entry name '" + e.name + "'");
    entries.push_back(std::move(e));
  }
  return entries;
}

std::string fetch_source(const std::string& source, const std::filesystem::path& base_dir) {
  if (source.rfind("http://", 0) == 0 || source.rfind("https://", 0) == 0) return fetch_url(source);
  std::filesystem::path p(source);
  if (p.is_relative()) p = base_dir / p;
  require(std::filesystem::is_regular_file(p), ErrorCode::kUnreachable, "source file not found: " + p.string());
  return read_file(p);
}

IngestReport ingest(const std::vector<ManifestEntry>& manifest, const std::filesystem::path& base_dir,
                    const std::filesystem::path& store_path) {
  require(!manifest.empty(), ErrorCode::kEmptyInput, "ingest: manifest has no entries");
  std::vector<std::string> contents;
  for (const ManifestEntry& e : manifest) {
    std::string body;
    try {
      body = fetch_source(e.source, base_dir);
    } catch (const Error& err) {
      fail(err.code(), "manifest entry '" + e.name + "': " + err.what());
    }
    if (!e.hash.empty()) {
      const std::string actual = sha256_hex(body);
      require(actual == e.hash, ErrorCode::kHashMismatch,
              "manifest entry '" + e.name + "': sha256 " + actual + " does not match declared " + e.hash);
    }
    if (e.expected_size)
      require(body.size() == e.expected_size, ErrorCode::kHashMismatch,
              "manifest entry '" + e.name + "': " + std::to_string(body.size()) + " bytes, declared " +
                  std::to_string(e.expected_size));
    contents.push_back(std::move(body));
  }

  IngestReport report;
  std::vector<Document> docs;
  std::map<std::string, SourceStats> by_domain;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const ManifestEntry& e = manifest[i];
    SourceStats s{e.name, e.domain, 0, 0, 0.0};
    std::size_t start = 0;
    const std::string& body = contents[i];
    while (start <= body.size()) {
      std::size_t end = body.find('\n', start);
      if (end == std::string::npos) end = body.size();
      std::string text = collapse_spaces(std::string_view(body).substr(start, end - start));
      if (!text.empty()) {
        s.bytes += text.size();
        docs.push_back({e.name + "-" + std::to_string(s.docs), e.domain, std::move(text)});
        ++s.docs;
      }
      start = end + 1;
    }
    auto& d = by_domain[e.domain];
    d.name = d.domain = e.domain;
    d.docs += s.docs;
    d.bytes += s.bytes;
    report.total_docs += s.docs;
    report.total_bytes += s.bytes;
    report.sources.push_back(s);
  }
  require(!docs.empty(), ErrorCode::kEmptyInput, "ingest: manifest produced no documents");
  const auto share = [&](std::size_t bytes) {
    return report.total_bytes ? 100.0 * static_cast<double>(bytes) / static_cast<double>(report.total_bytes) : 0.0;
  };
  for (auto& s : report.sources) s.share = share(s.bytes);
  for (auto& [name, d] : by_domain) {
    d.share = share(d.bytes);
    report.domains.push_back(d);
  }
  write_store(store_path, docs);
  return report;
}

std::string IngestReport::sources_csv() const {
  std::string out = "name,domain,docs,bytes,share_pct\n";
  for (const auto& s : sources)
    out += s.name + "," + s.domain + "," + std::to_string(s.docs) + "," + std::to_string(s.bytes) + "," +
           percent(s.share) + "\n";
  out += "TOTAL,," + std::to_string(total_docs) + "," + std::to_string(total_bytes) + ",100.00\n";
  return out;
}

std::string IngestReport::domains_csv() const {
  std::string out = "domain,docs,bytes,share_pct\n";
  for (const auto& d : domains)
    out += d.domain + "," + std::to_string(d.docs) + "," + std::to_string(d.bytes) + "," + percent(d.share) + "\n";
  return out;
}

std::vector<Document> read_store(const std::filesystem::path& path) {
  std::vector<Document> docs;
  std::size_t lineno = 0;
  for (const std::string& line : read_lines(path)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      docs.push_back({j.at("id").get<std::string>(), j.at("domain").get<std::string>(), j.at("text").get<std::string>()});
    } catch (const json::exception& e) {
      fail(ErrorCode::kParse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return docs;
}

void write_store(const std::filesystem::path& path, const std::vector<Document>& docs) {
  std::string out;
  for (const auto& d : docs) out += json{{"id", d.id}, {"domain", d.domain}, {"text", d.text}}.dump() + "\n";
  write_file_atomic(path, out);
}

}  // namespace slab
