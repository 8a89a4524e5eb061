#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ecpt/embedding.hpp"
#include "ecpt/llm_gateway.hpp"
#include "ecpt/metrics.hpp"
#include "ecpt/pipeline.hpp"

namespace ecpt {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitBackend = 3 };

struct EmbedderConfig {
  std::string kind = "hashing";  // "hashing" or "http"
  std::size_t dimension = kDefaultEmbeddingDim;
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "text-embedding-3-small";
  std::string api_key_env = "OPENAI_API_KEY";
};

struct BackendConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key_env = "OPENAI_API_KEY";
  int max_attempts = 3;
  int max_in_flight = 4;
};

/// gpt-3.5-turbo at $0.003/$0.004 and gpt-4-turbo at $0.01/$0.03 per 1k
/// prompt/completion tokens. Config entries override per model.
PricingTable default_pricing();

/// Run configuration. Relative paths in a config file resolve against the
/// file's directory; command-line flags override file values.
struct CliConfig {
  std::filesystem::path dataset_root;
  std::string tables_file = "tables.json";
  std::string questions_file = "dev.json";
  std::optional<std::filesystem::path> exclusions;
  std::filesystem::path kb;
  std::filesystem::path projection;
  std::filesystem::path checkpoint;
  std::filesystem::path results;
  std::filesystem::path report;

  EmbedderConfig embedder;
  BackendConfig backend;
  GenerationSettings generation;
  PipelineOptions options;
  TripletConfig training;
  PricingTable pricing = default_pricing();
  std::uint64_t seed = 0;
  std::size_t parallelism = 1;
};

/// Throws FormatError on unreadable or malformed files.
CliConfig load_cli_config(const std::filesystem::path& path);
CliConfig cli_config_from_json(const json& j, const std::filesystem::path& base_dir);

/// Entry point behind the `ecpt` binary. Returns an ExitCode.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ecpt
