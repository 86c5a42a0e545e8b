#include "commands.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include "ramreid/data.hpp"
#include "ramreid/error.hpp"
#include "ramreid/eval.hpp"
#include "ramreid/model.hpp"
#include "ramreid/synthetic.hpp"
#include "ramreid/training.hpp"

namespace ramreid::cli {

namespace {

void prepare_dir(const std::filesystem::path& dir) {
  if (dir.empty()) throw ConfigError("an output directory is required (--out)");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string() +
                  (ec ? ": " + ec.message() : std::string()));
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<FeatureSelection> parse_selections(const KeyValueConfig& config,
                                               std::size_t region_count) {
  std::vector<FeatureSelection> out;
  for (const std::string& s : config.get_list("eval.selections")) {
    out.push_back(FeatureSelection::parse(s, region_count));
  }
  if (out.empty()) throw ConfigError("eval.selections is empty");
  return out;
}

Dataset load_dataset_for(const KeyValueConfig& config, const RamConfig& model) {
  const std::string manifest = config.get_string("data.manifest");
  if (manifest.empty()) throw ConfigError("data.manifest is not set");
  return Dataset::load(load_manifest(manifest), model.input_c, model.input_h, model.input_w,
                       parse_resize_mode(config.get_string("data.resize")));
}

std::vector<std::size_t> test_samples(const DatasetManifest& manifest) {
  std::vector<std::size_t> rows = manifest.indices(Split::kQuery);
  for (std::size_t i : manifest.indices(Split::kGallery)) rows.push_back(i);
  if (rows.empty()) throw ValueError("the manifest has no query or gallery samples");
  return rows;
}

std::string fmt(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct TableRow {
  std::string model;
  std::string features;
  MetricsReport report;
};

std::string markdown_table(const std::vector<TableRow>& rows) {
  std::string out = "| model | features | mAP | Top-1 | Top-5 |\n|---|---|---|---|---|\n";
  for (const TableRow& r : rows) {
    const std::size_t k5 = std::min<std::size_t>(5, r.report.cmc.size());
    out += "| " + r.model + " | " + r.features + " | " + fmt(r.report.map, 4) + " | " +
           fmt(r.report.top(1), 4) + " | " + fmt(r.report.top(k5), 4) + " |\n";
  }
  return out;
}

// Evaluates every selection the checkpoint supports (or all, when `strict`,
// which turns an unsupported selection into an error).
std::vector<TableRow> evaluate_checkpoint(RamModel& model, const std::string& model_name,
                                          const Dataset& data, const KeyValueConfig& config,
                                          bool strict, const std::filesystem::path& metrics_dir,
                                          std::ostream& log) {
  const ProtocolSpec protocol = ProtocolSpec::from_config(config);
  const std::vector<std::size_t> rows = test_samples(data.manifest());
  std::vector<TableRow> table;
  for (const FeatureSelection& sel : parse_selections(config, model.config().region_count)) {
    if (!strict) {
      try {
        check_selection(model.config(), sel);
      } catch (const ValueError&) {
        continue;
      }
    }
    const FeatureTable features = extract_features(model, data, rows, sel);
    MetricsReport report = evaluate_protocol(features, protocol);
    report.selection = sel.name();
    write_text(metrics_dir / (sel.name() + ".json"), report.to_json());
    log << model_name << ' ' << sel.label() << ": mAP " << fmt(report.map, 4) << ", Top-1 "
        << fmt(report.top(1), 4) << '\n';
    table.push_back({model_name, sel.label(), std::move(report)});
  }
  return table;
}

}  // namespace

KeyValueConfig resolve_command_config(const std::string& command, const CommandOptions& options) {
  KeyValueConfig file;
  if (!options.config_file.empty()) file = KeyValueConfig::load(options.config_file);
  KeyValueConfig overrides;
  for (const std::string& a : options.assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got `" + a + "`");
    overrides.set(trim(a.substr(0, eq)), trim(a.substr(eq + 1)));
  }
  if (options.seed) {
    const std::string s = std::to_string(*options.seed);
    if (command == "gen-synthetic") overrides.set("synthetic.seed", s);
    if (command == "train") overrides.set("train.seed", s);
    if (command == "evaluate") overrides.set("eval.seed", s);
    if (command == "ablate") {
      overrides.set("synthetic.seed", s);
      overrides.set("train.seed", s);
      overrides.set("eval.seed", s);
    }
  }
  if (options.selections) overrides.set("eval.selections", *options.selections);
  if (options.protocol) overrides.set("eval.protocol", *options.protocol);
  if (options.trials) overrides.set("eval.trials", std::to_string(*options.trials));
  KeyValueConfig resolved = resolve_run_config(file, overrides);
  if (options.stage) limit_stages(resolved, *options.stage);
  return resolved;
}

void limit_stages(KeyValueConfig& config, const std::string& stage) {
  static const std::map<std::string, std::string> kAliases = {
      {"baseline", "conv"}, {"BN", "bn"}, {"BN+R", "region"}, {"RAM", "attribute"}};
  const auto alias = kAliases.find(stage);
  const std::string branch = alias == kAliases.end() ? stage : alias->second;
  std::vector<std::string> kept;
  bool found = false;
  for (const std::string& s : config.get_list("train.stages")) {
    kept.push_back(s);
    if (s == branch) {
      found = true;
      break;
    }
  }
  if (!found) {
    throw ConfigError("stage `" + stage + "` is not part of train.stages (" +
                      config.get_string("train.stages") + ")");
  }
  std::string joined;
  for (const std::string& s : kept) joined += (joined.empty() ? "" : ",") + s;
  config.set("train.stages", joined);
}

void cmd_gen_synthetic(const KeyValueConfig& config, const std::filesystem::path& out,
                       std::ostream& log) {
  const SyntheticSpec spec = SyntheticSpec::from_config(config);
  prepare_dir(out);
  const SyntheticDataset dataset = generate_synthetic(spec);
  write_synthetic(dataset, out);
  config.save(out / "config.txt");
  log << "wrote " << dataset.manifest.samples.size() << " images to " << out.string() << '\n';
}

void cmd_train(const KeyValueConfig& config, const std::filesystem::path& out, std::ostream& log) {
  const TrainPlan plan = TrainPlan::from_config(config);
  const RamConfig probe = RamConfig::from_config(config);
  const Dataset data = load_dataset_for(config, probe);
  const RamConfig model_config = model_config_for(config, data.manifest());
  prepare_dir(out);
  config.save(out / "config.txt");
  const PlanResult result = run_plan(plan, model_config, data, [&](const StageCheckpoint& ck) {
    save_model(ck.model, out / "checkpoints" / ck.name);
    log << "stage " << ck.name << ": " << ck.model.parameter_count() << " parameters\n";
  });
  result.log.save(out / "train_log.jsonl");
}

void cmd_extract(const KeyValueConfig& config, const std::filesystem::path& out, std::ostream& log) {
  const std::string checkpoint = config.get_string("eval.checkpoint");
  if (checkpoint.empty()) throw ConfigError("eval.checkpoint is not set");
  RamModel model = load_model(checkpoint);
  const Dataset data = load_dataset_for(config, model.config());
  const auto selections = parse_selections(config, model.config().region_count);
  for (const FeatureSelection& sel : selections) check_selection(model.config(), sel);
  prepare_dir(out);
  config.save(out / "config.txt");
  const std::vector<std::size_t> rows = test_samples(data.manifest());
  for (const FeatureSelection& sel : selections) {
    const FeatureTable table = extract_features(model, data, rows, sel);
    save_feature_table(table, out / (sel.name() + ".ramf"));
    log << sel.label() << ": " << table.size() << " rows of dimension " << table.dim << '\n';
  }
}

void cmd_evaluate(const KeyValueConfig& config, const std::filesystem::path& out,
                  std::ostream& log) {
  const std::string checkpoint = config.get_string("eval.checkpoint");
  if (checkpoint.empty()) throw ConfigError("eval.checkpoint is not set");
  RamModel model = load_model(checkpoint);
  for (const FeatureSelection& sel : parse_selections(config, model.config().region_count)) {
    check_selection(model.config(), sel);
  }
  ProtocolSpec::from_config(config);
  const Dataset data = load_dataset_for(config, model.config());
  prepare_dir(out);
  config.save(out / "config.txt");
  const std::string name = std::filesystem::path(checkpoint).filename().string();
  const auto rows = evaluate_checkpoint(model, name.empty() ? "model" : name, data, config, true,
                                        out, log);
  write_text(out / "table.md", markdown_table(rows));
}

void cmd_ablate(const KeyValueConfig& config, const std::filesystem::path& out, std::ostream& log) {
  KeyValueConfig run = config;
  const TrainPlan plan = TrainPlan::from_config(run);
  ProtocolSpec::from_config(run);
  prepare_dir(out);
  if (run.get_string("data.manifest").empty()) {
    const SyntheticSpec spec = SyntheticSpec::from_config(run);
    write_synthetic(generate_synthetic(spec), out / "data");
    run.set("data.manifest", (out / "data" / "manifest.csv").string());
    log << "generated synthetic data in " << (out / "data").string() << '\n';
  }
  const RamConfig probe = RamConfig::from_config(run);
  const Dataset data = load_dataset_for(run, probe);
  config.save(out / "config.txt");

  std::vector<TableRow> table;
  const PlanResult result = run_plan(plan, model_config_for(run, data.manifest()), data,
                                     [&](const StageCheckpoint& ck) {
    const auto dir = out / "checkpoints" / ck.name;
    save_model(ck.model, dir);
    prepare_dir(out / "metrics" / ck.name);
    RamModel model = ck.model;
    auto rows = evaluate_checkpoint(model, ck.name, data, run, false, out / "metrics" / ck.name, log);
    table.insert(table.end(), rows.begin(), rows.end());
  });
  result.log.save(out / "train_log.jsonl");
  const std::string md = markdown_table(table);
  write_text(out / "ablation.md", md);
  log << md;
}

int exit_code_for(const std::string& category) {
  static const std::map<std::string, int> kCodes = {
      {"usage", 2}, {"config", 3}, {"parse", 4}, {"io", 5},
      {"value", 6}, {"shape", 7},  {"state", 8}, {"internal", 9}};
  auto it = kCodes.find(category);
  return it == kCodes.end() ? 1 : it->second;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-branch vehicle re-identification toolkit", "ramreid"};
  app.require_subcommand(1);
  CommandOptions options;
  std::uint64_t seed = 0;
  std::string stage, selections, protocol;
  std::size_t trials = 0;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-synthetic", "Write a synthetic dataset (images, manifest, spec echo)"},
      {"train", "Run the staged training plan and save one checkpoint per stage"},
      {"extract", "Write feature tables for the test split of a manifest"},
      {"evaluate", "Evaluate a checkpoint on the query/gallery protocol"},
      {"ablate", "Train every stage and evaluate each checkpoint and feature combination"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", options.config_file, "Key-value config file")->check(CLI::ExistingFile);
    sub->add_option("--out", options.out, "Output directory")->required();
    sub->add_option("--set", options.assignments, "Override a config key (key=value)");
    if (name != "extract") sub->add_option("--seed", seed, "Seed for this command's section");
    if (name == "train" || name == "ablate") {
      sub->add_option("--stage", stage, "Last stage to run (conv|bn|region|attribute or baseline|BN|BN+R|RAM)");
    }
    if (name == "extract" || name == "evaluate" || name == "ablate") {
      sub->add_option("--selections", selections, "Comma-separated feature selections, e.g. f_c,f_c+f_b");
    }
    if (name == "evaluate" || name == "ablate") {
      sub->add_option("--protocol", protocol, "fixed_split or random_gallery");
      sub->add_option("--trials", trials, "Trials for random_gallery")->check(CLI::PositiveNumber);
    }
  }

  std::vector<std::string> args;
  for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
  try {
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error[usage]: " << e.what() << '\n';
    return exit_code_for("usage");
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  auto given = [&](const char* flag) {
    auto* opt = sub->get_option_no_throw(flag);
    return opt != nullptr && opt->count() > 0;
  };
  if (given("--seed")) options.seed = seed;
  if (given("--stage")) options.stage = stage;
  if (given("--selections")) options.selections = selections;
  if (given("--protocol")) options.protocol = protocol;
  if (given("--trials")) options.trials = trials;

  try {
    const KeyValueConfig config = resolve_command_config(command, options);
    if (command == "gen-synthetic") cmd_gen_synthetic(config, options.out, out);
    if (command == "train") cmd_train(config, options.out, out);
    if (command == "extract") cmd_extract(config, options.out, out);
    if (command == "evaluate") cmd_evaluate(config, options.out, out);
    if (command == "ablate") cmd_ablate(config, options.out, out);
  } catch (const Error& e) {
    const std::string category(error_kind_name(e.kind()));
    err << "error[" << category << "]: " << e.what() << '\n';
    return exit_code_for(category);
  } catch (const std::exception& e) {
    err << "error[internal]: " << e.what() << '\n';
    return exit_code_for("internal");
  }
  return 0;
}

}  // namespace ramreid::cli
