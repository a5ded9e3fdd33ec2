#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "slab/cli/config.hpp"
#include "slab/error.hpp"
#include "slab/pretrain/corpus.hpp"

namespace slab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitRuntime = 3;

int exit_code(const Error& e);

struct CommandInfo {
  std::string name;
  std::string summary;
  std::vector<std::string> keys;      // settings the command reads
  std::vector<std::string> required;  // keys that must be non-empty
};

// train-vocab, ingest, pretrain, finetune, grid-search, eval, perplexity,
// bench, gen-synth
const std::vector<CommandInfo>& command_table();
const CommandInfo* find_command(std::string_view name);

// Runs one subcommand. Outputs are written to a staging directory next to
// --out and renamed into place only when the command succeeds, so a failed
// run leaves nothing behind; --out must not exist yet (pretrain --resume
// continues inside an existing --out instead). Every run directory holds
// config.txt (all settings the command read, replayable with --config) and
// inputs.txt (SHA-256 of every input file). Returns kExitOk, or kExitRuntime
// for a grid search whose trials all failed (its report is still written);
// errors propagate as slab::Error.
int run_command(std::string_view name, const RunConfig& config, std::ostream& log);

// Documents from .jsonl stores, or one document per non-blank line of a text
// file (domain = file stem).
std::vector<Document> load_documents(const std::vector<std::string>& paths);

}  // namespace slab
