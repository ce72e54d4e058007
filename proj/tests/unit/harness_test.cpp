#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "gecadapt/error.hpp"
#include "gecadapt/harness.hpp"

using namespace gecadapt;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("gecadapt-test-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// A pipeline small enough to run in seconds.
ExperimentConfig tiny_experiment(const fs::path& out) {
  ExperimentConfig c = preset_config(Preset::Desk);
  c.data.l1s = {L1::ES};
  c.data.levels = {Level::A2};
  c.data.sentences_per_cell = 80;
  c.data.general_sentences = 300;
  c.data.general_dev_size = 30;
  c.data.train_size = 40;
  c.data.dev_size = 10;
  c.data.test_size = 20;
  c.data.bpe_merges = 60;
  c.model.embed_dim = 12;
  c.model.hidden_dim = 12;
  c.model.max_decode_len = 30;
  c.pretrain.epochs = 1;
  c.finetune.epochs = 1;
  c.seeds = {1};
  c.keys = {parse_key("ES-A2")};
  c.out_dir = out;
  return c;
}

ReportRow row(Scenario s, const char* key, std::uint64_t seed, std::size_t tp, std::size_t fp,
              std::size_t fn) {
  return {s, parse_key(key), seed, make_report(tp, fp, fn), 10.0, {}, {}};
}

}  // namespace

TEST(Scenario, Applicability) {
  const auto level = parse_key("A2"), l1 = parse_key("ES"), both = parse_key("ES-A2");
  for (const auto& k : {level, l1, both}) {
    EXPECT_TRUE(applicable(Scenario::Unadapted, k));
    EXPECT_TRUE(applicable(Scenario::Random, k));
  }
  EXPECT_TRUE(applicable(Scenario::Level, level));
  EXPECT_FALSE(applicable(Scenario::Level, l1));
  EXPECT_TRUE(applicable(Scenario::L1, both));
  EXPECT_FALSE(applicable(Scenario::L1Level, level));
  EXPECT_EQ(adaptation_key(Scenario::Level, both).name(), "A2");
  EXPECT_EQ(adaptation_key(Scenario::L1, both).name(), "ES");
  EXPECT_EQ(adaptation_key(Scenario::L1Level, both).name(), "ES-A2");
  EXPECT_THROW(adaptation_key(Scenario::L1Level, l1), ValidationError);
  for (Scenario s : kAllScenarios) EXPECT_EQ(parse_scenario(to_string(s)), s);
}

TEST(ExperimentConfig, PresetsValidate) {
  for (Preset p : {Preset::Desk, Preset::Paper}) {
    const auto c = preset_config(p);
    EXPECT_NO_THROW(c.validate());
    EXPECT_GE(c.seeds.size(), 3u);
    EXPECT_EQ(c.scenarios.size(), 5u);
  }
  const auto paper = preset_config(Preset::Paper);
  EXPECT_EQ(paper.model.embed_dim, 500);
  EXPECT_EQ(paper.model.enc_layers, 3);
  EXPECT_EQ(paper.pretrain.batch_size, 296);
  EXPECT_EQ(paper.finetune.learning_rate, 0.00025);
}

TEST(ExperimentConfig, FileOverlaysPreset) {
  const auto file = parse_toml(R"(
[experiment]
preset = "desk"
scenarios = ["Unadapted", "L1Level"]
seeds = [4, 5]
keys = ["ES-A2"]

[model]
word_vec_size = 32
rnn_size = 48
dropout = 0.2

[pretrain]
epochs = 3
learning_rate = 0.002
optim = "adam"

[finetune]
batch_size = 8
trainable = ["src_embed", "encoder", "decoder"]
)");
  const auto c = experiment_config_from(file, Preset::Paper);
  EXPECT_EQ(c.scenarios, (std::vector<Scenario>{Scenario::Unadapted, Scenario::L1Level}));
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{4, 5}));
  EXPECT_EQ(c.model.embed_dim, 32);
  EXPECT_EQ(c.model.hidden_dim, 48);
  EXPECT_EQ(c.model.dropout_p, 0.2);
  EXPECT_EQ(c.pretrain.epochs, 3);
  EXPECT_EQ(c.finetune.batch_size, 8);
  // Fine-tuning follows the pre-training rate unless given.
  EXPECT_EQ(c.finetune.learning_rate, 0.002 / 4);
  EXPECT_TRUE(c.freeze.trains(Group::Decoder));
  EXPECT_FALSE(c.freeze.trains(Group::TgtEmbed));
}

TEST(ExperimentConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(experiment_config_from(parse_toml("[model]\nhidden = 3\n"), Preset::Desk),
               ConfigError);
  EXPECT_THROW(experiment_config_from(parse_toml("[extra]\nx = 1\n"), Preset::Desk), ConfigError);
  EXPECT_THROW(experiment_config_from(parse_toml("[pretrain]\noptim = \"sgd\"\n"), Preset::Desk),
               ConfigError);
  EXPECT_THROW(experiment_config_from(parse_toml("[experiment]\nseeds = [1, 1]\n"), Preset::Desk),
               ConfigError);
  EXPECT_THROW(experiment_config_from(parse_toml("[experiment]\nscenarios = []\n"), Preset::Desk),
               ConfigError);
  EXPECT_THROW(experiment_config_from(parse_toml("[model]\nrnn_size = \"big\"\n"), Preset::Desk),
               ConfigError);
}

TEST(ExperimentConfig, ShippedConfigsLoad) {
  for (const char* name : {"desk.toml", "paper.toml"}) {
    const fs::path path = fs::path(GECADAPT_SOURCE_DIR) / "configs" / name;
    ASSERT_TRUE(fs::exists(path)) << path;
    const auto c = load_experiment_config(path, Preset::Desk);
    EXPECT_NO_THROW(c.validate());
  }
  const auto desk = load_experiment_config(fs::path(GECADAPT_SOURCE_DIR) / "configs/desk.toml",
                                           Preset::Paper);
  EXPECT_EQ(desk.model.embed_dim, preset_config(Preset::Desk).model.embed_dim);
}

TEST(ExperimentConfig, DefaultKeysCoverEveryKind) {
  auto c = preset_config(Preset::Desk);
  c.keys.clear();
  const auto keys = c.resolved_keys();
  EXPECT_EQ(keys.size(), c.data.levels.size() + c.data.l1s.size() +
                             c.data.levels.size() * c.data.l1s.size());
}

TEST(Report, JsonRoundTripAndMeans) {
  ScenarioReport r;
  r.scenarios = {Scenario::Unadapted, Scenario::L1Level};
  r.keys = {parse_key("ES-A2"), parse_key("CN-B1")};
  r.seeds = {1, 2};
  for (std::uint64_t seed : r.seeds)
    for (const auto& k : r.keys)
      for (Scenario s : r.scenarios)
        r.rows.push_back(row(s, k.name().c_str(), seed, 1 + seed, 1, s == Scenario::L1Level ? 1 : 3));
  EXPECT_TRUE(r.missing_cells().empty());
  const auto back = report_from_json(to_json(r));
  ASSERT_EQ(back.rows.size(), r.rows.size());
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].metrics.f_beta, r.rows[i].metrics.f_beta);
    EXPECT_EQ(back.rows[i].key, r.rows[i].key);
  }
  const auto f1 = r.find(Scenario::L1Level, r.keys[0], 1)->metrics.f_beta;
  const auto f2 = r.find(Scenario::L1Level, r.keys[0], 2)->metrics.f_beta;
  EXPECT_DOUBLE_EQ(*r.mean_f(Scenario::L1Level, r.keys[0]), (f1 + f2) / 2);
  EXPECT_GT(*r.scenario_mean(Scenario::L1Level, [](const SubsetKey&) { return true; }),
            *r.scenario_mean(Scenario::Unadapted, [](const SubsetKey&) { return true; }));
  r.rows.pop_back();
  EXPECT_EQ(r.missing_cells().size(), 1u);
  EXPECT_THROW(make_tables(r), ValidationError);
}

TEST(Tables, SingleCellHasEqualAverage) {
  ScenarioReport r;
  r.scenarios = {Scenario::Unadapted};
  r.keys = {parse_key("ES")};
  r.seeds = {1};
  r.rows = {row(Scenario::Unadapted, "ES", 1, 3, 1, 2)};
  const auto tables = make_tables(r);
  ASSERT_EQ(tables.size(), 1u);
  const auto& t = tables[0];
  ASSERT_EQ(t.cells.size(), 1u);
  ASSERT_EQ(t.cells[0].size(), 2u);
  EXPECT_EQ(t.col_labels.back(), "Avg.");
  EXPECT_DOUBLE_EQ(*t.cells[0][0], *t.cells[0][1]);
}

TEST(Tables, AverageColumnAndCsvRoundTrip) {
  ScenarioReport r;
  r.scenarios = {Scenario::Unadapted, Scenario::Random, Scenario::Level};
  r.keys = {parse_key("A2"), parse_key("B1"), parse_key("ES")};
  r.seeds = {1};
  for (const auto& k : r.keys)
    for (Scenario s : r.scenarios)
      if (applicable(s, k)) r.rows.push_back(row(s, k.name().c_str(), 1, 2 + static_cast<int>(s), 2, 3));
  const auto tables = make_tables(r);
  ASSERT_EQ(tables.size(), 2u);  // Level and L1 kinds
  for (const auto& t : tables) {
    for (const auto& cells : t.cells) {
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t c = 0; c + 1 < cells.size(); ++c)
        if (cells[c]) {
          sum += *cells[c];
          ++n;
        }
      EXPECT_NEAR(*cells.back(), sum / n, 0.05);
    }
    const auto back = parse_csv_table(to_csv(t));
    EXPECT_EQ(back.row_labels, t.row_labels);
    EXPECT_EQ(back.col_labels, t.col_labels);
    for (std::size_t i = 0; i < t.cells.size(); ++i)
      for (std::size_t j = 0; j < t.cells[i].size(); ++j)
        EXPECT_NEAR(*back.cells[i][j], *t.cells[i][j], 0.05);
    EXPECT_NE(to_markdown(t).find("| Avg. |"), std::string::npos);
  }
  EXPECT_THROW(parse_csv_table("scenario,A2\nRandom,abc\n"), ParseError);
}

TEST(Tables, ErrorTypeTable) {
  TypeTableInput in;
  in.key = parse_key("DE-B1");
  in.sources = {tokenize("I saw dog"), tokenize("He go home")};
  in.golds = {{{2, 2, {"a"}, ErrorType::Det}}, {{1, 2, {"goes"}, ErrorType::Verb}}};
  in.system = {tokenize("I saw a dog"), tokenize("He go home")};
  in.random = in.system;
  const std::vector<TypeTableInput> inputs{in};
  const auto same = emit_error_type_table(inputs);
  ASSERT_EQ(same.col_labels.size(), 7u);
  ASSERT_EQ(same.cells.size(), 1u);
  for (std::size_t c = 0; c < 7; ++c) {
    const bool has_gold = same.col_labels[c] == "Det" || same.col_labels[c] == "Verb";
    ASSERT_EQ(same.cells[0][c].has_value(), has_gold) << same.col_labels[c];
    if (has_gold) EXPECT_EQ(*same.cells[0][c], 0.0);
  }
  auto better = inputs;
  better[0].random = better[0].sources;
  const auto t = emit_error_type_table(better);
  EXPECT_DOUBLE_EQ(*t.cells[0][0], 100.0);
  auto broken = inputs;
  broken[0].system.pop_back();
  EXPECT_THROW(emit_error_type_table(broken), ValidationError);
}

TEST(Experiment, UnadaptedOnlyThenCachedRerun) {
  const auto dir = scratch_dir("unadapted");
  auto c = tiny_experiment(dir);
  c.scenarios = {Scenario::Unadapted};
  std::vector<std::string> log;
  ExperimentHooks hooks;
  hooks.progress = [&](std::string_view m) { log.emplace_back(m); };
  const auto r = run_experiment(c, hooks);
  ASSERT_EQ(r.rows.size(), 1u);
  for (const auto& m : log) EXPECT_EQ(m.find("fine-tune"), std::string::npos) << m;
  EXPECT_TRUE(fs::exists(dir / "report.json"));
  EXPECT_TRUE(fs::exists(r.rows[0].hypotheses));
  EXPECT_TRUE(fs::exists(r.rows[0].test_set));
  // Scores are recomputable from the persisted files.
  const auto test = load_corpus(r.rows[0].test_set);
  const auto again = score_corpus(test, read_hypotheses(r.rows[0].hypotheses));
  EXPECT_EQ(again.tp, r.rows[0].metrics.tp);
  EXPECT_EQ(again.fp, r.rows[0].metrics.fp);
  EXPECT_EQ(again.fn, r.rows[0].metrics.fn);
  EXPECT_NEAR(r.rows[0].error_rate, error_rate(test), 1e-12);
  fs::remove_all(dir);
}

TEST(Experiment, RandomIsServedFromCacheOnRerun) {
  const auto dir = scratch_dir("random");
  auto c = tiny_experiment(dir);
  c.scenarios = {Scenario::Unadapted, Scenario::Random, Scenario::Level, Scenario::L1,
                 Scenario::L1Level};
  const auto first = run_experiment(c);
  // |rows| = applicable scenarios x keys x seeds.
  EXPECT_EQ(first.rows.size(), 5u);
  std::vector<std::string> log;
  ExperimentHooks hooks;
  hooks.progress = [&](std::string_view m) { log.emplace_back(m); };
  const auto second = run_experiment(c, hooks);
  EXPECT_TRUE(std::any_of(log.begin(), log.end(), [](const std::string& m) {
    return m.find("fine-tune Random: cache hit") != std::string::npos;
  }));
  for (Scenario s : c.scenarios) {
    const auto* a = first.find(s, c.keys[0], 1);
    const auto* b = second.find(s, c.keys[0], 1);
    ASSERT_TRUE(a && b);
    EXPECT_EQ(a->metrics.tp, b->metrics.tp);
    EXPECT_EQ(a->metrics.fp, b->metrics.fp);
  }
  const auto tables = emit_tables(second, dir / "tables");
  EXPECT_FALSE(tables.empty());
  for (const auto& p : tables) EXPECT_TRUE(fs::exists(p));
  fs::remove_all(dir);
}

TEST(Experiment, TooSmallSubsetSurfacesUnchanged) {
  const auto dir = scratch_dir("small");
  auto c = tiny_experiment(dir);
  c.scenarios = {Scenario::Unadapted};
  c.data.sentences_per_cell = 30;
  EXPECT_THROW(run_experiment(c), SubsetTooSmall);
  fs::remove_all(dir);
}
