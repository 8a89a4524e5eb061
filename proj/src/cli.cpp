#include "ecpt/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "ecpt/kb_store.hpp"
#include "ecpt/spider_ingest.hpp"
#include "ecpt/sql_runner.hpp"

namespace ecpt {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void read_step(const json& steps, const char* name, StepParams& params) {
  if (!steps.contains(name)) return;
  const auto& s = steps.at(name);
  params.temperature = s.value("temperature", params.temperature);
  params.max_tokens = s.value("max_tokens", params.max_tokens);
}

}  // namespace

PricingTable default_pricing() {
  PricingTable t;
  t.set("gpt-3.5-turbo", ModelPrice::from_dollars(0.003, 0.004));
  t.set("gpt-4-turbo", ModelPrice::from_dollars(0.01, 0.03));
  return t;
}

CliConfig cli_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  CliConfig c;
  try {
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      c.dataset_root = resolve(base_dir, d.value("root", ""));
      c.tables_file = d.value("tables", c.tables_file);
      c.questions_file = d.value("questions", c.questions_file);
      if (d.contains("exclusions") && !d.at("exclusions").is_null()) {
        c.exclusions = resolve(base_dir, d.at("exclusions").get<std::string>());
      }
    }
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      c.kb = resolve(base_dir, p.value("kb", ""));
      c.projection = resolve(base_dir, p.value("projection", ""));
      c.checkpoint = resolve(base_dir, p.value("checkpoint", ""));
      c.results = resolve(base_dir, p.value("results", ""));
      c.report = resolve(base_dir, p.value("report", ""));
    }
    if (j.contains("embedder")) {
      const auto& e = j.at("embedder");
      c.embedder.kind = e.value("kind", c.embedder.kind);
      c.embedder.dimension = e.value("dimension", c.embedder.dimension);
      c.embedder.base_url = e.value("base_url", c.embedder.base_url);
      c.embedder.model = e.value("model", c.embedder.model);
      c.embedder.api_key_env = e.value("api_key_env", c.embedder.api_key_env);
    }
    if (j.contains("backend")) {
      const auto& b = j.at("backend");
      c.backend.base_url = b.value("base_url", c.backend.base_url);
      c.backend.api_key_env = b.value("api_key_env", c.backend.api_key_env);
      c.backend.max_attempts = b.value("max_attempts", c.backend.max_attempts);
      c.backend.max_in_flight = b.value("max_in_flight", c.backend.max_in_flight);
    }
    if (j.contains("generation")) {
      const auto& g = j.at("generation");
      c.generation.model = g.value("model", c.generation.model);
      if (g.contains("steps")) {
        const auto& s = g.at("steps");
        read_step(s, "zero_shot", c.generation.zero_shot);
        read_step(s, "diagnosis", c.generation.diagnosis);
        read_step(s, "prescription", c.generation.prescription);
        read_step(s, "treatment", c.generation.treatment);
        read_step(s, "generic", c.generation.generic);
      }
    }
    if (j.contains("options")) c.options = options_from_json(j.at("options"));
    if (j.contains("training")) {
      const auto& t = j.at("training");
      c.training.margin = t.value("margin", c.training.margin);
      c.training.learning_rate = t.value("learning_rate", c.training.learning_rate);
      c.training.epochs = t.value("epochs", c.training.epochs);
      c.training.batch_size = t.value("batch_size", c.training.batch_size);
    }
    if (j.contains("pricing")) {
      const auto table = PricingTable::from_json(j.at("pricing"));
      for (const auto& [model, entry] : j.at("pricing").items()) c.pricing.set(model, table.at(model));
    }
    c.seed = j.value("seed", c.seed);
    c.parallelism = j.value("parallelism", c.parallelism);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad config: ") + e.what());
  }
  return c;
}

CliConfig load_cli_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return cli_config_from_json(j, path.parent_path());
}

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  std::size_t parallelism = 1;
  std::string mock_backend;
};

std::unique_ptr<BaseEmbedder> make_embedder(const EmbedderConfig& c) {
  if (c.kind == "hashing") return std::make_unique<HashingEmbedder>(c.dimension);
  if (c.kind == "http") {
    HttpEmbedder::Config hc;
    hc.base_url = c.base_url;
    hc.model = c.model;
    hc.api_key_env = c.api_key_env;
    hc.dimension = c.dimension;
    return std::make_unique<HttpEmbedder>(hc);
  }
  throw UsageError("unknown embedder kind: " + c.kind);
}

const std::filesystem::path& require_path(const std::filesystem::path& p, const char* what) {
  if (p.empty()) throw UsageError(std::string("no ") + what + " given (flag or config)");
  return p;
}

struct Dataset {
  std::vector<SchemaDescription> schemas;
  std::vector<DatasetItem> items;
  std::size_t excluded = 0;
  std::vector<std::string> missing_databases;
};

Dataset load_dataset(const CliConfig& cfg, SqlRunner& runner) {
  const auto& root = require_path(cfg.dataset_root, "dataset root");
  Dataset d;
  d.schemas = load_schemas(root / cfg.tables_file);
  const auto questions = root / cfg.questions_file;
  if (cfg.exclusions) {
    const auto exclusions = ExclusionList::load(*cfg.exclusions);
    d.items = load_items(questions, d.schemas, exclusions);
    d.excluded = load_items(questions, d.schemas).size() - d.items.size();
  } else {
    d.items = load_items(questions, d.schemas);
  }
  d.missing_databases = register_databases(runner, root, d.schemas);
  return d;
}

std::map<std::string, SchemaDescription> schema_map(const std::vector<SchemaDescription>& schemas) {
  std::map<std::string, SchemaDescription> out;
  for (const auto& s : schemas) out.emplace(s.db_id, s);
  return out;
}

int cmd_ingest(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  SqlRunner runner;
  auto d = load_dataset(cfg, runner);
  const auto failures = validate_ground_truth(d.items, runner);
  out << "databases: " << d.schemas.size() << "\n"
      << "items: " << d.items.size() << "\n"
      << "excluded: " << d.excluded << "\n"
      << "missing database files: " << d.missing_databases.size() << "\n"
      << "ground-truth failures: " << failures << "\n";
  for (const auto& item : d.items) {
    if (!item.truth_ok) err << "ground truth failed for " << item.ref() << ": " << item.truth_error << "\n";
  }
  if (!d.missing_databases.empty()) {
    for (const auto& id : d.missing_databases) err << "missing database file: " << database_path(cfg.dataset_root, id).string() << "\n";
    return kExitData;
  }
  return kExitOk;
}

int cmd_build_kb(const CliConfig& cfg, const std::filesystem::path& cases_path,
                 const std::optional<std::filesystem::path>& projection, std::ostream& out) {
  const auto& out_path = require_path(cfg.kb, "KB output path");
  auto cases = read_correction_cases(cases_path);
  if (!cfg.dataset_root.empty()) {
    const auto schemas = schema_map(load_schemas(cfg.dataset_root / cfg.tables_file));
    for (auto& cc : cases) {
      if (!cc.case_.schema.tables.empty()) continue;
      auto it = schemas.find(cc.case_.schema.db_id);
      if (it != schemas.end()) cc.case_.schema = it->second;
    }
  }
  auto embedder = make_embedder(cfg.embedder);
  const ProjectionModel model =
      projection ? ProjectionModel::load(*projection) : ProjectionModel::identity(embedder->dimension());
  KbStore kb(model.dimension(), model.hash(), embedder->identity());
  for (const auto& cc : cases) kb.insert(cc, *embedder, model);
  kb.persist(out_path);
  out << "stored " << kb.size() << " correction cases in " << out_path.string() << " (projection " << model.hash()
      << (model.trained() ? ", fine-tuned" : ", identity") << ")\n";
  return kExitOk;
}

int cmd_train(const CliConfig& cfg, const std::filesystem::path& cases_path, std::ostream& out) {
  const auto& out_path = require_path(cfg.projection, "projection output path");
  const auto cases = read_correction_cases(cases_path);
  auto embedder = make_embedder(cfg.embedder);
  std::vector<std::string> texts;
  texts.reserve(cases.size());
  for (const auto& cc : cases) texts.push_back(serialize_case(cc.case_, true));
  const auto base = embedder->embed_batch(texts);
  std::vector<LabeledVector> samples;
  samples.reserve(cases.size());
  for (std::size_t i = 0; i < cases.size(); ++i) {
    samples.push_back({base[i].values(), label_index(cases[i].primary_label())});
  }

  out << "training projection: " << samples.size() << " cases, " << cfg.training.epochs << " epochs, seed "
      << cfg.seed << "\n";
  double previous = -1.0;
  auto on_epoch = [&](int epoch, double loss) {
    out << "epoch " << std::setw(3) << epoch << "  loss " << std::fixed << std::setprecision(6) << loss;
    if (previous >= 0.0 && loss > previous) out << "  (increased)";
    out << "\n" << std::defaultfloat;
    previous = loss;
  };
  auto result = train(samples, cfg.training, cfg.seed, on_epoch);
  if (result.skipped_anchors > 0) out << "anchors without a positive: " << result.skipped_anchors << "\n";
  result.model.save(out_path);
  out << "wrote " << out_path.string() << " (projection " << result.model.hash() << ")\n";
  return kExitOk;
}

struct RunFlags {
  bool resume = false;
  std::optional<std::size_t> limit;
};

int cmd_run(const CliConfig& cfg, const Globals& globals, const RunFlags& flags, std::ostream& out, std::ostream& err) {
  const auto& results_path = require_path(cfg.results, "results path");
  const std::filesystem::path checkpoint =
      cfg.checkpoint.empty() ? std::filesystem::path(results_path.string() + ".checkpoint") : cfg.checkpoint;

  SqlRunner runner;
  auto d = load_dataset(cfg, runner);
  for (const auto& id : d.missing_databases) err << "warning: missing database file for " << id << "\n";
  if (flags.limit && *flags.limit < d.items.size()) d.items.resize(*flags.limit);
  validate_ground_truth(d.items, runner);

  std::unique_ptr<LlmBackend> backend;
  if (!globals.mock_backend.empty()) {
    backend = MockBackend::from_file(globals.mock_backend);
  } else {
    if (std::getenv(cfg.backend.api_key_env.c_str()) == nullptr) {
      err << "environment variable " << cfg.backend.api_key_env << " is not set\n";
      return kExitBackend;
    }
    OpenAiChatBackend::Config bc;
    bc.base_url = cfg.backend.base_url;
    bc.api_key_env = cfg.backend.api_key_env;
    bc.max_attempts = cfg.backend.max_attempts;
    backend = std::make_unique<OpenAiChatBackend>(bc);
  }
  LlmGateway gateway(*backend, cfg.backend.max_in_flight);

  PipelineContext ctx;
  ctx.runner = &runner;
  ctx.gateway = &gateway;
  ctx.settings = cfg.generation;
  ctx.schemas = schema_map(d.schemas);
  ctx.options = cfg.options;

  std::optional<KbStore> kb;
  std::unique_ptr<BaseEmbedder> embedder;
  ProjectionModel model;
  if (!cfg.options.generic) {
    kb.emplace(KbStore::load(require_path(cfg.kb, "KB path")));
    embedder = make_embedder(cfg.embedder);
    model = cfg.options.option_a_finetuned_embeddings
                ? ProjectionModel::load(require_path(cfg.projection, "projection path"))
                : ProjectionModel::identity(kb->dimension());
    ctx.kb = &*kb;
    ctx.embedder = embedder.get();
    ctx.model = &model;
  }
  Pipeline pipeline(std::move(ctx));

  if (!flags.resume) std::filesystem::remove(checkpoint);
  std::size_t done = 0;
  RunHooks hooks;
  hooks.on_complete = [&](const CaseResult& r) {
    ++done;
    err << "[" << done << "] " << r.item_ref << " " << to_string(r.status);
    if (r.evaluated()) {
      err << " " << to_string(r.zero_shot_outcome.kind) << " -> " << to_string(r.final_outcome.kind) << " ("
          << r.trials.size() << " trials)";
    } else {
      err << ": " << r.error;
    }
    err << "\n";
  };
  auto results = pipeline.run_dataset(d.items, cfg.parallelism, checkpoint, hooks);

  write_results(results_path, {cfg.generation.model, cfg.options, results});
  const auto report = build_report(results, cfg.pricing, cfg.generation.model);
  if (!cfg.report.empty()) {
    std::ofstream rep(cfg.report, std::ios::trunc);
    if (!rep) throw FormatError("cannot write report " + cfg.report.string());
    rep << report_to_json(report).dump(2) << "\n";
  }
  out << render_report_text(report);
  if (report.total_cases == 0 && report.errored_items > 0) return kExitBackend;
  return kExitOk;
}

int cmd_report(const CliConfig& cfg, const std::filesystem::path& results_path, std::ostream& out) {
  const auto file = read_results(results_path);
  const auto report = build_report(file.results, cfg.pricing, file.model);
  if (!cfg.report.empty()) {
    std::ofstream rep(cfg.report, std::ios::trunc);
    if (!rep) throw FormatError("cannot write report " + cfg.report.string());
    rep << report_to_json(report).dump(2) << "\n";
  }
  out << render_report_text(report);
  return kExitOk;
}

int cmd_export(const CliConfig& cfg, const std::filesystem::path& out_path, std::ostream& out) {
  const auto kb = KbStore::load(require_path(cfg.kb, "KB path"));
  export_embeddings(kb, out_path);
  out << "exported " << kb.size() << " embeddings to " << out_path.string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Error correction pipeline for LLM-generated SQL"};
  app.name("ecpt");
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  auto* o_config = app.add_option("--config", g.config, "Run configuration (JSON)");
  auto* o_seed = app.add_option("--seed", g.seed, "Random seed");
  auto* o_par = app.add_option("--parallelism", g.parallelism, "Items processed concurrently")->check(CLI::PositiveNumber);
  app.add_option("--mock-backend", g.mock_backend, "Scripted LLM backend file instead of the HTTP API");

  std::string dataset_root, kb_path, projection_path, cases_path, out_path, results_path, report_path, checkpoint_path;
  std::string model_name;

  auto* ingest = app.add_subcommand("ingest", "Load and validate a Spider-format dataset");
  auto* o_ing_root = ingest->add_option("--dataset-root", dataset_root, "Dataset directory");
  std::string exclusions_path;
  auto* o_ing_excl = ingest->add_option("--exclusions", exclusions_path, "Exclusion list file");

  auto* build_kb = app.add_subcommand("build-kb", "Embed correction cases into a knowledge-base store");
  build_kb->add_option("--cases", cases_path, "Correction-case file")->required();
  auto* o_kb_out = build_kb->add_option("--out", kb_path, "Store file to write");
  auto* o_kb_proj = build_kb->add_option("--projection", projection_path, "Fine-tuned projection (identity if omitted)");
  auto* o_kb_root = build_kb->add_option("--dataset-root", dataset_root, "Fill missing schemas from this dataset");

  auto* train_cmd = app.add_subcommand("train-embeddings", "Train the projection head with triplet loss");
  train_cmd->add_option("--cases", cases_path, "Labeled correction-case file")->required();
  auto* o_tr_out = train_cmd->add_option("--out", projection_path, "Projection file to write");
  int epochs = 0;
  double learning_rate = 0, margin = 0;
  std::size_t batch_size = 0;
  auto* o_epochs = train_cmd->add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
  auto* o_lr = train_cmd->add_option("--learning-rate", learning_rate, "SGD step size")->check(CLI::PositiveNumber);
  auto* o_margin = train_cmd->add_option("--margin", margin, "Triplet margin")->check(CLI::PositiveNumber);
  auto* o_batch = train_cmd->add_option("--batch-size", batch_size, "Mini-batch size")->check(CLI::PositiveNumber);

  auto* run_cmd = app.add_subcommand("run", "Zero-shot generation plus error correction over a dataset");
  auto* o_run_root = run_cmd->add_option("--dataset-root", dataset_root, "Dataset directory");
  auto* o_run_kb = run_cmd->add_option("--kb", kb_path, "Knowledge-base store");
  auto* o_run_proj = run_cmd->add_option("--projection", projection_path, "Fine-tuned projection (option A)");
  auto* o_run_out = run_cmd->add_option("--out", results_path, "Results file");
  auto* o_run_report = run_cmd->add_option("--report", report_path, "Report JSON file");
  auto* o_run_ckpt = run_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file");
  auto* o_run_model = run_cmd->add_option("--model", model_name, "Chat model name");
  RunFlags run_flags;
  run_cmd->add_flag("--resume", run_flags.resume, "Continue from an existing checkpoint");
  auto* f_generic = run_cmd->add_flag("--generic", "Generic self-correction baseline");
  auto* f_a = run_cmd->add_flag("--option-a", "Use the fine-tuned projection");
  auto* f_b = run_cmd->add_flag("--option-b", "Show one example per error type in diagnosis");
  auto* f_c = run_cmd->add_flag("--option-c", "Retrieve with every diagnosed error type");
  int max_trials = 0;
  std::size_t retrieval_k = 0, limit = 0;
  auto* o_trials = run_cmd->add_option("--max-trials", max_trials, "Correction trials per case")->check(CLI::PositiveNumber);
  auto* o_k = run_cmd->add_option("--k", retrieval_k, "Retrieved examples per prescription")->check(CLI::NonNegativeNumber);
  auto* o_limit = run_cmd->add_option("--limit", limit, "Only the first N items");

  auto* report_cmd = app.add_subcommand("report", "Recompute a report from a results file");
  report_cmd->add_option("--results", results_path, "Results file")->required();
  auto* o_rep_out = report_cmd->add_option("--out", report_path, "Report JSON file");

  auto* export_cmd = app.add_subcommand("export-embeddings", "Write labeled KB vectors for plotting");
  auto* o_exp_kb = export_cmd->add_option("--kb", kb_path, "Knowledge-base store");
  export_cmd->add_option("--out", out_path, "Output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    for (auto* sub : app.get_subcommands()) {
      if (sub->parsed()) err << sub->help();
    }
    return kExitUsage;
  }

  try {
    CliConfig cfg = o_config->count() ? load_cli_config(g.config) : CliConfig{};
    if (o_seed->count()) cfg.seed = g.seed;
    if (o_par->count()) cfg.parallelism = g.parallelism;
    auto set_path = [](CLI::Option* opt, const std::string& value, std::filesystem::path& target) {
      if (opt->count()) target = value;
    };

    if (ingest->parsed()) {
      set_path(o_ing_root, dataset_root, cfg.dataset_root);
      if (o_ing_excl->count()) cfg.exclusions = exclusions_path;
      return cmd_ingest(cfg, out, err);
    }
    if (build_kb->parsed()) {
      set_path(o_kb_out, kb_path, cfg.kb);
      set_path(o_kb_root, dataset_root, cfg.dataset_root);
      std::optional<std::filesystem::path> projection;
      if (o_kb_proj->count()) projection = projection_path;
      return cmd_build_kb(cfg, cases_path, projection, out);
    }
    if (train_cmd->parsed()) {
      set_path(o_tr_out, projection_path, cfg.projection);
      if (o_epochs->count()) cfg.training.epochs = epochs;
      if (o_lr->count()) cfg.training.learning_rate = learning_rate;
      if (o_margin->count()) cfg.training.margin = margin;
      if (o_batch->count()) cfg.training.batch_size = batch_size;
      return cmd_train(cfg, cases_path, out);
    }
    if (run_cmd->parsed()) {
      set_path(o_run_root, dataset_root, cfg.dataset_root);
      set_path(o_run_kb, kb_path, cfg.kb);
      set_path(o_run_proj, projection_path, cfg.projection);
      set_path(o_run_out, results_path, cfg.results);
      set_path(o_run_report, report_path, cfg.report);
      set_path(o_run_ckpt, checkpoint_path, cfg.checkpoint);
      if (o_run_model->count()) cfg.generation.model = model_name;
      if (f_generic->count()) cfg.options.generic = true;
      if (f_a->count()) cfg.options.option_a_finetuned_embeddings = true;
      if (f_b->count()) cfg.options.option_b_examples_in_diagnosis = true;
      if (f_c->count()) cfg.options.option_c_resolve_all_at_once = true;
      if (o_trials->count()) cfg.options.max_trials = max_trials;
      if (o_k->count()) cfg.options.retrieval_k = retrieval_k;
      if (o_limit->count()) run_flags.limit = limit;
      cfg.options.validate();
      return cmd_run(cfg, g, run_flags, out, err);
    }
    if (report_cmd->parsed()) {
      set_path(o_rep_out, report_path, cfg.report);
      return cmd_report(cfg, results_path, out);
    }
    if (export_cmd->parsed()) {
      set_path(o_exp_kb, kb_path, cfg.kb);
      return cmd_export(cfg, out_path, out);
    }
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const LlmError& e) {
    err << "backend error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace ecpt
