#include "cli_app.hpp"

#include <map>
#include <ostream>

#include "CLI11.hpp"
#include "slab/cli/commands.hpp"

namespace slab {

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"slab: adapt masked-language-model encoders to specialised text domains"};
  app.require_subcommand(1, 1);
  app.fallthrough(false);

  std::map<std::string, std::string> config_files;
  std::map<std::string, std::map<std::string, std::string>> values;
  std::map<std::string, CLI::App*> subs;
  for (const CommandInfo& cmd : command_table()) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.summary);
    sub->add_option("--config", config_files[cmd.name], "key = value settings file");
    for (const std::string& key : cmd.keys) {
      const KeySpec* spec = find_key(key);
      std::string help = spec->help;
      if (!spec->default_value.empty()) help += " [" + spec->default_value + "]";
      sub->add_option("--" + key, values[cmd.name][key], help);
    }
    subs[cmd.name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int status = app.exit(e, out, err);
    return status == 0 ? kExitOk : kExitValidation;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  try {
    RunConfig config;
    if (!config_files[name].empty()) config.merge_file(config_files[name]);
    for (const std::string& key : find_command(name)->keys)
      if (chosen->get_option("--" + key)->count() > 0) config.set(key, values[name][key]);
    return run_command(name, config, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace slab
