#pragma once

// Experiment configuration, orchestration of the adaptation scenarios, and
// table emission.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gecadapt/corpus.hpp"
#include "gecadapt/eval.hpp"
#include "gecadapt/nn.hpp"
#include "gecadapt/synth.hpp"
#include "gecadapt/train.hpp"

namespace gecadapt {

// TOML subset: [section] headers (dotted names nest), key = value pairs with
// strings, integers, floats, booleans and single-line arrays of those, and #
// comments. Result is a JSON object. ParseError with the line number.
nlohmann::json parse_toml(std::istream& in);
nlohmann::json parse_toml(std::string_view text);

enum class Scenario { Unadapted, Random, Level, L1, L1Level };
inline constexpr Scenario kAllScenarios[] = {Scenario::Unadapted, Scenario::Random,
                                             Scenario::Level, Scenario::L1, Scenario::L1Level};
std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view s);

// Adapted scenarios apply to a test key when their selection key generalizes
// it: Level and L1 to their own kind and to L1-Level keys, L1Level only to
// L1-Level keys. Unadapted and Random apply everywhere.
bool applicable(Scenario s, const SubsetKey& test_key);
// Key whose training data the scenario fine-tunes on for `test_key`.
SubsetKey adaptation_key(Scenario s, const SubsetKey& test_key);

struct DataConfig {
  std::vector<L1> l1s;
  std::vector<Level> levels;
  std::size_t sentences_per_cell = 1500;
  std::size_t general_sentences = 20000;
  std::size_t general_dev_size = 500;  // held out of the general pool
  std::size_t train_size = 800;
  std::size_t dev_size = 100;
  std::size_t test_size = 200;
  std::size_t bpe_merges = 500;
  std::size_t max_units = 60;
  // Learner corpus from a file instead of the generator.
  std::optional<std::filesystem::path> corpus_path;
  std::optional<std::filesystem::path> general_corpus_path;
  // Replaces the default learner cells when set (seed is overridden per run).
  std::optional<GeneratorProfile> learner_profile;
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig pretrain;
  TrainConfig finetune;
  FreezePolicy freeze = FreezePolicy::adaptation();
  std::vector<Scenario> scenarios;
  // Test keys; empty means every Level, L1 and L1-Level key of the data.
  std::vector<SubsetKey> keys;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path out_dir = "runs/experiment";
  // Defaults to out_dir / "cache".
  std::optional<std::filesystem::path> cache_dir;
  int workers = 1;
  int beam_size = 1;

  // ConfigError on empty scenario or seed lists, duplicate seeds, sizes that
  // cannot be met, or invalid nested configs.
  void validate() const;
  std::vector<SubsetKey> resolved_keys() const;
  std::filesystem::path resolved_cache_dir() const;
};

enum class Preset { Desk, Paper };
Preset parse_preset(std::string_view s);

// Defaults for a preset (model sizes, train configs, data sizes, 3 seeds).
ExperimentConfig preset_config(Preset p);
// Overlays a parsed config file onto the preset named by experiment.preset
// (or `fallback`). Every recognised key is listed in configs/*.toml; unknown
// keys are a ConfigError.
ExperimentConfig experiment_config_from(const nlohmann::json& file, Preset fallback);
ExperimentConfig load_experiment_config(const std::filesystem::path& path, Preset fallback);

struct ReportRow {
  Scenario scenario;
  SubsetKey key;
  std::uint64_t seed;
  MetricReport metrics;
  double error_rate = 0.0;  // of the key's test split
  std::filesystem::path hypotheses;  // one tokenized sentence per line
  std::filesystem::path test_set;    // corpus JSONL of the test split
};

struct ScenarioReport {
  std::vector<Scenario> scenarios;
  std::vector<SubsetKey> keys;
  std::vector<std::uint64_t> seeds;
  std::vector<ReportRow> rows;

  const ReportRow* find(Scenario s, const SubsetKey& key, std::uint64_t seed) const;
  // F0.5 averaged over seeds; nullopt when the cell has no rows.
  std::optional<double> mean_f(Scenario s, const SubsetKey& key) const;
  // Unweighted mean over the keys `filter` accepts (per key, seed-averaged
  // F0.5 first). nullopt when no key has rows for the scenario.
  std::optional<double> scenario_mean(Scenario s,
                                      const std::function<bool(const SubsetKey&)>& filter) const;
  // Every (scenario, key, seed) that applies but has no row.
  std::vector<std::string> missing_cells() const;
};

nlohmann::json to_json(const ScenarioReport& r);
ScenarioReport report_from_json(const nlohmann::json& j);

struct ExperimentHooks {
  std::function<void(std::string_view)> progress;
};

// Full pipeline per seed: corpora, BPE, base model, Random and adapted
// fine-tunes, decoding and scoring of every applicable test key. Checkpoints,
// logs, hypotheses and test splits go under out_dir; trained models are cached
// by content hash. Errors are rethrown as Error naming the stage, except
// SubsetTooSmall which propagates unchanged.
ScenarioReport run_experiment(const ExperimentConfig& config, const ExperimentHooks& hooks = {});

struct Table {
  std::string title;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;  // includes a trailing "Avg." when present
  std::vector<std::vector<std::optional<double>>> cells;
};

// One table per key kind present (Level, L1, L1-Level): scenarios as rows,
// keys as columns, F0.5 x 100 averaged over seeds, then an "Avg." column.
// ValidationError listing missing cells.
std::vector<Table> make_tables(const ScenarioReport& report);

// One decimal place; absent cells are empty.
std::string to_csv(const Table& t);
std::string to_markdown(const Table& t);
// Inverse of to_csv (title excluded). ParseError on malformed input.
Table parse_csv_table(std::string_view csv);

// Writes <stem>.csv and <stem>.md per table into `dir`; returns the paths.
std::vector<std::filesystem::path> emit_tables(const ScenarioReport& report,
                                               const std::filesystem::path& dir);

// Inputs for one key's per-type comparison.
struct TypeTableInput {
  SubsetKey key;
  std::vector<Tokens> sources;
  std::vector<std::vector<Edit>> golds;
  std::vector<Tokens> system;
  std::vector<Tokens> random;
};

// Rows = keys, columns = the seven error types, cells = delta F0.5 points
// over Random; blank when the key has no gold edit of the type.
// ValidationError when hypotheses are missing or misaligned.
Table emit_error_type_table(std::span<const TypeTableInput> inputs);

// Loads the inputs for `scenario` vs Random from a finished report's files.
std::vector<TypeTableInput> type_table_inputs(const ScenarioReport& report, Scenario scenario,
                                              std::span<const SubsetKey> keys);

std::vector<Tokens> read_hypotheses(const std::filesystem::path& path);
void write_hypotheses(const std::filesystem::path& path, std::span<const Tokens> hyps);

}  // namespace gecadapt
