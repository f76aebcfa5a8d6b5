#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "featxlate/config.hpp"
#include "featxlate/data.hpp"

namespace featxlate {

// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitStageOrder = 3,
  kExitIo = 4,
  kExitNumeric = 5,
};

// Cache root actually used: <paths.cache>/<lineage hash>.
std::filesystem::path cache_root(const RunConfig& config);
DomainDataset build_dataset(const DomainSource& source);

void cmd_stats(const RunConfig& config, bool force, std::ostream& log);

struct TrainArgs {
  bool resume = false;
  bool force = false;
};
void cmd_train(const RunConfig& config, const TrainArgs& args, std::ostream& log);

void cmd_translate(const RunConfig& config, const std::filesystem::path& input, const std::filesystem::path& output,
                   std::ostream& log);

struct EvaluateArgs {
  std::filesystem::path source, target, translated;
  std::filesystem::path out;  // empty: <paths.results>/<dataset>_<direction>
};
// Returns the Fréchet distance between translated and target embeddings.
double cmd_evaluate(const RunConfig& config, const EvaluateArgs& args, std::ostream& log);

// Parses argv, runs one subcommand and maps errors to exit codes.
int run_cli(int argc, char** argv);

}  // namespace featxlate
