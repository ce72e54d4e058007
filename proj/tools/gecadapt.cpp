// Command-line front end: corpus generation, subword learning, training,
// scoring, full experiments and report tables.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gecadapt/bpe.hpp"
#include "gecadapt/corpus.hpp"
#include "gecadapt/error.hpp"
#include "gecadapt/eval.hpp"
#include "gecadapt/harness.hpp"
#include "gecadapt/nn.hpp"
#include "gecadapt/synth.hpp"
#include "gecadapt/train.hpp"

namespace fs = std::filesystem;
using namespace gecadapt;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string preset = "desk";

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "TOML configuration file")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "Random seed");
    app->add_option("--out-dir", out_dir, "Output directory");
    app->add_option("--preset", preset, "Defaults: desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}));
  }

  ExperimentConfig experiment() const {
    const Preset p = parse_preset(preset);
    ExperimentConfig c = config.empty() ? preset_config(p) : load_experiment_config(config, p);
    if (seed) c.seeds = {*seed};
    if (!out_dir.empty()) c.out_dir = out_dir;
    c.validate();
    return c;
  }

  fs::path dir() const {
    const fs::path d = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
    fs::create_directories(d);
    return d;
  }
};

Corpus load_any(const std::string& path) {
  if (fs::path(path).extension() == ".m2") {
    std::ifstream f(path);
    if (!f) throw Error("cannot read " + path);
    return read_m2(f);
  }
  return load_corpus(path);
}

void print_epoch(const EpochRecord& r) {
  std::cerr << "epoch " << r.epoch << "  lr " << r.lr << "  train " << r.train_loss << "  dev "
            << r.dev_loss << "  " << r.wallclock << "s\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grammatical error correction with metadata-based adaptation"};
  app.require_subcommand(1);

  // generate
  Common gen_c;
  std::string gen_kind = "learner", gen_out;
  std::vector<std::string> gen_l1s, gen_levels;
  std::size_t gen_n = 0;
  bool gen_m2 = false;
  auto* gen = app.add_subcommand("generate", "Write a synthetic corpus (JSONL or M2)");
  gen_c.add_to(gen);
  gen->add_option("--kind", gen_kind, "learner or general")
      ->check(CLI::IsMember({"learner", "general"}));
  gen->add_option("--l1", gen_l1s, "First languages (learner corpus)");
  gen->add_option("--level", gen_levels, "Proficiency levels (learner corpus)");
  gen->add_option("-n,--sentences", gen_n, "Sentence count (default from the preset)");
  gen->add_option("-o,--output", gen_out, "Output file")->required();
  gen->add_flag("--m2", gen_m2, "Write M2 instead of JSONL");

  // learn-bpe
  Common bpe_c;
  std::vector<std::string> bpe_inputs;
  std::optional<std::size_t> bpe_merges;
  std::string bpe_out;
  auto* lbpe = app.add_subcommand("learn-bpe", "Learn subword merges from corpora");
  bpe_c.add_to(lbpe);
  lbpe->add_option("corpora", bpe_inputs, "Corpus files (JSONL or .m2)")->required();
  lbpe->add_option("--merges", bpe_merges, "Number of merges");
  lbpe->add_option("-o,--output", bpe_out, "Merge file")->required();

  // train-base
  Common tb_c;
  std::string tb_train, tb_dev, tb_bpe;
  auto* tb = app.add_subcommand("train-base", "Pre-train the general model");
  tb_c.add_to(tb);
  tb->add_option("--train", tb_train, "Training corpus")->required()->check(CLI::ExistingFile);
  tb->add_option("--dev", tb_dev, "Dev corpus")->required()->check(CLI::ExistingFile);
  tb->add_option("--bpe", tb_bpe, "Merge file")->required()->check(CLI::ExistingFile);

  // fine-tune
  Common ft_c;
  std::string ft_base, ft_train, ft_dev, ft_bpe;
  std::vector<std::string> ft_trainable;
  std::optional<int> ft_epochs;
  std::optional<double> ft_lr;
  auto* ft = app.add_subcommand("fine-tune", "Adapt a base model to an in-domain subset");
  ft_c.add_to(ft);
  ft->add_option("--base", ft_base, "Base checkpoint")->required()->check(CLI::ExistingFile);
  ft->add_option("--train", ft_train, "Subset training corpus")->required()->check(CLI::ExistingFile);
  ft->add_option("--dev", ft_dev, "Subset dev corpus")->check(CLI::ExistingFile);
  ft->add_option("--bpe", ft_bpe, "Merge file")->required()->check(CLI::ExistingFile);
  ft->add_option("--trainable", ft_trainable, "Trainable groups (src_embed tgt_embed encoder decoder)");
  ft->add_option("--epochs", ft_epochs, "Epoch budget");
  ft->add_option("--learning-rate", ft_lr, "Initial learning rate");

  // score
  Common sc_c;
  std::string sc_gold, sc_hyp, sc_model, sc_bpe;
  double sc_beta = 0.5;
  std::size_t sc_window = 2;
  int sc_beam = 1;
  bool sc_tokenized = false, sc_json = false, sc_types = false;
  auto* sc = app.add_subcommand("score", "M2 scoring of hypotheses against gold edits");
  sc_c.add_to(sc);
  sc->add_option("--gold", sc_gold, "Gold corpus (JSONL or .m2)")->required()->check(CLI::ExistingFile);
  sc->add_option("--hyp", sc_hyp, "Hypothesis file, one sentence per line")->required();
  sc->add_option("--model", sc_model, "Decode the gold sources with this checkpoint into --hyp first")
      ->check(CLI::ExistingFile);
  sc->add_option("--bpe", sc_bpe, "Merge file (with --model)")->check(CLI::ExistingFile);
  sc->add_option("--beam", sc_beam, "Beam size (with --model)");
  sc->add_option("--beta", sc_beta, "F-beta weight");
  sc->add_option("--merge-window", sc_window, "Unchanged tokens allowed inside merged edits");
  sc->add_flag("--tokenized", sc_tokenized, "Hypotheses are already tokenized");
  sc->add_flag("--json", sc_json, "Print JSON instead of a table");
  sc->add_flag("--types", sc_types, "Also print per-type scores");

  // experiment
  Common ex_c;
  std::optional<int> ex_workers;
  auto* ex = app.add_subcommand("experiment", "Run every configured scenario end to end");
  ex_c.add_to(ex);
  ex->add_option("--workers", ex_workers, "Concurrent training/decoding jobs");

  // report
  Common rp_c;
  std::string rp_report;
  std::string rp_types;
  auto* rp = app.add_subcommand("report", "Emit tables from a finished experiment");
  rp_c.add_to(rp);
  rp->add_option("--report", rp_report, "report.json of an experiment")->required()->check(CLI::ExistingFile);
  rp->add_option("--error-types", rp_types, "Scenario to compare with Random per error type");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      ExperimentConfig c = gen_c.experiment();
      const std::uint64_t seed = c.seeds.front();
      Corpus corpus;
      if (gen_kind == "general") {
        corpus = generate_corpus(general_profile(seed), gen_n ? gen_n : c.data.general_sentences);
      } else {
        std::vector<L1> l1s = c.data.l1s;
        std::vector<Level> levels = c.data.levels;
        if (!gen_l1s.empty()) {
          l1s.clear();
          for (const auto& s : gen_l1s) l1s.push_back(parse_l1(s));
        }
        if (!gen_levels.empty()) {
          levels.clear();
          for (const auto& s : gen_levels) levels.push_back(parse_level(s));
        }
        corpus = generate_corpus(default_profile(l1s, levels, seed),
                                 gen_n ? gen_n : c.data.sentences_per_cell * l1s.size() * levels.size());
      }
      if (gen_m2) {
        std::ofstream f(gen_out);
        if (!f) throw Error("cannot write " + gen_out);
        write_m2(f, corpus);
      } else {
        save_corpus(corpus, gen_out);
      }
      std::cerr << corpus.size() << " sentences, " << error_rate(corpus)
                << " errors per 100 tokens -> " << gen_out << "\n";
    } else if (*lbpe) {
      ExperimentConfig c = bpe_c.experiment();
      std::vector<Tokens> stream;
      for (const auto& p : bpe_inputs) {
        const auto s = bpe_stream(load_any(p));
        stream.insert(stream.end(), s.begin(), s.end());
      }
      const BpeModel bpe = learn_bpe(stream, bpe_merges.value_or(c.data.bpe_merges));
      bpe.save(fs::path(bpe_out));
      std::cerr << bpe.merges().size() << " merges, vocabulary " << bpe.vocab_size() << "\n";
    } else if (*tb) {
      ExperimentConfig c = tb_c.experiment();
      const BpeModel bpe = BpeModel::load(fs::path(tb_bpe));
      ModelConfig mc = c.model;
      mc.vocab_size = static_cast<int>(bpe.vocab_size());
      TrainConfig tc = c.pretrain;
      tc.seed = c.seeds.front();
      const fs::path dir = tb_c.dir();
      std::ofstream log(dir / "train_base.jsonl");
      TrainHooks hooks{&log, print_epoch};
      const TrainResult r =
          train_base(encode_corpus(bpe, load_any(tb_train), c.data.max_units),
                     encode_corpus(bpe, load_any(tb_dev), c.data.max_units), mc, tc, hooks);
      save_checkpoint(r.params, dir / "base.ckpt");
      std::cerr << "best epoch " << r.best_epoch << " -> " << (dir / "base.ckpt").string() << "\n";
    } else if (*ft) {
      ExperimentConfig c = ft_c.experiment();
      const BpeModel bpe = BpeModel::load(fs::path(ft_bpe));
      const ModelParams<float> base = load_checkpoint<float>(fs::path(ft_base));
      TrainConfig tc = c.finetune;
      tc.seed = c.seeds.front();
      if (ft_epochs) tc.epochs = *ft_epochs;
      if (ft_lr) tc.learning_rate = *ft_lr;
      const FreezePolicy freeze = ft_trainable.empty() ? c.freeze : FreezePolicy::parse(ft_trainable);
      const fs::path dir = ft_c.dir();
      std::ofstream log(dir / "fine_tune.jsonl");
      TrainHooks hooks{&log, print_epoch};
      const ParallelData dev = ft_dev.empty() ? ParallelData{}
                                              : encode_corpus(bpe, load_any(ft_dev), c.data.max_units);
      const TrainResult r =
          fine_tune(base, encode_corpus(bpe, load_any(ft_train), c.data.max_units), dev, tc, freeze, hooks);
      save_checkpoint(r.params, dir / "adapted.ckpt");
      std::cerr << "-> " << (dir / "adapted.ckpt").string() << "\n";
    } else if (*sc) {
      const Corpus gold = load_any(sc_gold);
      if (!sc_model.empty()) {
        if (sc_bpe.empty()) throw ConfigError("--model needs --bpe");
        const BpeModel bpe = BpeModel::load(fs::path(sc_bpe));
        const ModelParams<float> model = load_checkpoint<float>(fs::path(sc_model));
        std::vector<Tokens> hyps;
        for (const auto& s : gold) {
          const auto ids = bpe.encode(s.source);
          hyps.push_back(bpe.decode(
              sc_beam > 1 ? decode_beam(model, ids, sc_beam, model.config.max_decode_len)
                          : decode_greedy(model, ids, model.config.max_decode_len)));
        }
        write_hypotheses(sc_hyp, hyps);
      }
      std::vector<Tokens> hyps;
      if (sc_tokenized || !sc_model.empty()) {
        hyps = read_hypotheses(sc_hyp);
      } else {
        std::ifstream f(sc_hyp);
        if (!f) throw Error("cannot read " + sc_hyp);
        for (std::string line; std::getline(f, line);) hyps.push_back(tokenize(line));
      }
      if (hyps.size() != gold.size())
        throw ValidationError("gold has " + std::to_string(gold.size()) + " sentences, hypotheses " +
                              std::to_string(hyps.size()));
      const MetricReport r = score_corpus(gold, hyps, sc_beta, sc_window);
      std::cout << (sc_json ? to_json(r) + "\n" : to_text_table(r));
      if (sc_types) {
        std::vector<Tokens> sources;
        std::vector<std::vector<Edit>> golds;
        for (const auto& s : gold) {
          sources.push_back(s.source);
          golds.push_back(s.edits);
        }
        const auto by_type = score_by_type(sources, hyps, golds, sc_beta, sc_window);
        for (std::size_t t = 0; t < by_type.size(); ++t) {
          const auto& m = by_type[t];
          if (m.tp + m.fn == 0) continue;
          std::cout << to_string(static_cast<ErrorType>(t)) << "\t" << to_json(m) << "\n";
        }
      }
    } else if (*ex) {
      ExperimentConfig c = ex_c.experiment();
      if (ex_workers) c.workers = *ex_workers;
      const auto t0 = std::chrono::steady_clock::now();
      ExperimentHooks hooks;
      hooks.progress = [&](std::string_view msg) {
        const auto s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cerr << "[" << static_cast<long>(s) << "s] " << msg << "\n";
      };
      const ScenarioReport report = run_experiment(c, hooks);
      for (const auto& p : emit_tables(report, c.out_dir)) std::cerr << "wrote " << p.string() << "\n";
      for (const auto& t : make_tables(report)) std::cout << to_markdown(t) << "\n";
    } else if (*rp) {
      std::ifstream f(rp_report);
      const ScenarioReport report = report_from_json(nlohmann::json::parse(f));
      const fs::path dir = rp_c.dir();
      for (const auto& p : emit_tables(report, dir)) std::cerr << "wrote " << p.string() << "\n";
      for (const auto& t : make_tables(report)) std::cout << to_markdown(t) << "\n";
      if (!rp_types.empty()) {
        const Scenario s = parse_scenario(rp_types);
        std::vector<SubsetKey> keys;
        for (const auto& k : report.keys)
          if (applicable(s, k)) keys.push_back(k);
        const Table t = emit_error_type_table(type_table_inputs(report, s, keys));
        std::ofstream csv(dir / "table_error_types.csv");
        csv << to_csv(t);
        std::ofstream md(dir / "table_error_types.md");
        md << to_markdown(t);
        std::cout << to_markdown(t);
      }
    }
  } catch (const SubsetTooSmall& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
