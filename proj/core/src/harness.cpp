#include "gecadapt/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "gecadapt/bpe.hpp"
#include "gecadapt/error.hpp"

namespace gecadapt {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::Unadapted: return "Unadapted";
    case Scenario::Random: return "Random";
    case Scenario::Level: return "Level";
    case Scenario::L1: return "L1";
    case Scenario::L1Level: return "L1Level";
  }
  return "?";
}

Scenario parse_scenario(std::string_view s) {
  for (Scenario sc : kAllScenarios)
    if (to_string(sc) == s) return sc;
  throw ConfigError("unknown scenario '" + std::string(s) + "'");
}

bool applicable(Scenario s, const SubsetKey& k) {
  switch (s) {
    case Scenario::Unadapted:
    case Scenario::Random: return true;
    case Scenario::Level: return k.level.has_value();
    case Scenario::L1: return k.l1.has_value();
    case Scenario::L1Level: return k.is_l1_level();
  }
  return false;
}

SubsetKey adaptation_key(Scenario s, const SubsetKey& k) {
  if (!applicable(s, k))
    throw ValidationError(std::string(to_string(s)) + " does not apply to " + k.name());
  switch (s) {
    case Scenario::Level: return make_key(std::nullopt, k.level);
    case Scenario::L1: return make_key(k.l1, std::nullopt);
    case Scenario::L1Level: return k;
    default: return {};
  }
}

// Configuration -----------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (scenarios.empty()) throw ConfigError("scenario list is empty");
  if (seeds.empty()) throw ConfigError("seed list is empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("seeds must be distinct");
  if (data.l1s.empty() || data.levels.empty())
    throw ConfigError("data.l1s and data.levels must be non-empty");
  if (data.train_size < 1 || data.dev_size < 1 || data.test_size < 1)
    throw ConfigError("train, dev and test sizes must be >= 1");
  if (data.general_dev_size < 1 || data.general_sentences <= data.general_dev_size)
    throw ConfigError("general_sentences must exceed general_dev_size");
  if (data.max_units < 1) throw ConfigError("max_units must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
  ModelConfig m = model;
  m.vocab_size = BpeModel::kNumSpecials + 1;  // set from the subword model at run time
  m.validate();
  pretrain.validate();
  finetune.validate();
  freeze.validate();
  if (data.learner_profile) data.learner_profile->validate();
  for (const auto& k : keys) {
    if (!k.level && !k.l1) throw ConfigError("test keys need a level or an L1");
    if (k.level && std::find(data.levels.begin(), data.levels.end(), *k.level) == data.levels.end())
      throw ConfigError("key " + k.name() + " uses a level outside data.levels");
    if (k.l1 && std::find(data.l1s.begin(), data.l1s.end(), *k.l1) == data.l1s.end())
      throw ConfigError("key " + k.name() + " uses an L1 outside data.l1s");
  }
}

std::vector<SubsetKey> ExperimentConfig::resolved_keys() const {
  if (!keys.empty()) return keys;
  std::vector<SubsetKey> out;
  for (Level lv : data.levels) out.push_back(make_key(std::nullopt, lv));
  for (L1 l1 : data.l1s) out.push_back(make_key(l1, std::nullopt));
  for (L1 l1 : data.l1s)
    for (Level lv : data.levels) out.push_back(make_key(l1, lv));
  return out;
}

fs::path ExperimentConfig::resolved_cache_dir() const {
  return cache_dir ? *cache_dir : out_dir / "cache";
}

Preset parse_preset(std::string_view s) {
  if (s == "desk") return Preset::Desk;
  if (s == "paper") return Preset::Paper;
  throw ConfigError("unknown preset '" + std::string(s) + "' (expected desk or paper)");
}

ExperimentConfig preset_config(Preset p) {
  ExperimentConfig c;
  c.data.l1s = {L1::ES, L1::CN, L1::DE, L1::FR};
  c.data.levels = {Level::A2, Level::B1, Level::B2};
  c.scenarios = {std::begin(kAllScenarios), std::end(kAllScenarios)};
  c.seeds = {1, 2, 3};
  if (p == Preset::Desk) {
    c.model = desk_model_config(0);
    c.pretrain = desk_pretrain_config();
    c.pretrain.early_stop_patience = 3;
    c.finetune = desk_finetune_config();
    c.out_dir = "runs/desk";
  } else {
    c.model = paper_model_config(0);
    c.pretrain = paper_pretrain_config();
    c.pretrain.early_stop_patience = 3;
    c.finetune = paper_finetune_config();
    c.data.sentences_per_cell = 12000;
    c.data.general_sentences = 2000000;
    c.data.general_dev_size = 5000;
    c.data.train_size = 8000;
    c.data.dev_size = 1000;
    c.data.test_size = 2000;
    c.data.bpe_merges = 20000;
    c.beam_size = 5;
    c.out_dir = "runs/paper";
  }
  return c;
}

namespace {

// Reads known keys out of one table and rejects the rest.
class Section {
 public:
  Section(const json& root, const std::string& name) : name_(name) {
    if (!root.contains(name)) return;
    if (!root.at(name).is_object()) throw ConfigError("[" + name + "] must be a table");
    obj_ = &root.at(name);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key)) return;
    try {
      out = obj_->at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name_ + "." + key + " has the wrong type");
    }
  }

  template <typename T, typename F>
  void get_list(const std::string& key, std::vector<T>& out, F convert) {
    std::vector<std::string> names;
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key)) return;
    get(key, names);
    out.clear();
    for (const auto& n : names) {
      try {
        out.push_back(convert(n));
      } catch (const Error& e) {
        throw ConfigError(name_ + "." + key + ": " + e.what());
      }
    }
  }

  bool has(const std::string& key) const { return obj_ && obj_->contains(key); }

  void reject_unknown() const {
    if (!obj_) return;
    for (const auto& [k, v] : obj_->items())
      if (!seen_.count(k)) throw ConfigError("unknown key " + name_ + "." + k);
  }

 private:
  std::string name_;
  const json* obj_ = nullptr;
  std::set<std::string> seen_;
};

void read_train(Section& s, TrainConfig& t) {
  std::string optim = "adam";
  s.get("epochs", t.epochs);
  s.get("batch_size", t.batch_size);
  s.get("learning_rate", t.learning_rate);
  s.get("optim", optim);
  s.get("start_decay_at", t.start_decay_at);
  s.get("max_grad_norm", t.max_grad_norm);
  s.get("adam_beta1", t.adam_beta1);
  s.get("adam_beta2", t.adam_beta2);
  s.get("adam_eps", t.adam_eps);
  if (s.has("dropout")) {
    double d = 0.0;
    s.get("dropout", d);
    t.dropout = d;
  }
  if (s.has("early_stop_patience")) {
    int p = 0;
    s.get("early_stop_patience", p);
    t.early_stop_patience = p;
  }
  if (optim != "adam") throw ConfigError("only optim = \"adam\" is supported");
}

}  // namespace

ExperimentConfig experiment_config_from(const json& file, Preset fallback) {
  if (!file.is_object()) throw ConfigError("config root must be a table");
  for (const auto& [k, v] : file.items())
    if (k != "experiment" && k != "data" && k != "model" && k != "pretrain" && k != "finetune")
      throw ConfigError("unknown table [" + k + "]");

  Section ex(file, "experiment");
  std::string preset_name = fallback == Preset::Desk ? "desk" : "paper";
  ex.get("preset", preset_name);
  ExperimentConfig c = preset_config(parse_preset(preset_name));
  ex.get_list("scenarios", c.scenarios, [](const std::string& s) { return parse_scenario(s); });
  ex.get_list("keys", c.keys, [](const std::string& s) { return parse_key(s); });
  ex.get("seeds", c.seeds);
  std::string out_dir = c.out_dir.string(), cache_dir;
  ex.get("out_dir", out_dir);
  c.out_dir = out_dir;
  if (ex.has("cache_dir")) {
    ex.get("cache_dir", cache_dir);
    c.cache_dir = cache_dir;
  } else {
    ex.get("cache_dir", cache_dir);
  }
  ex.get("workers", c.workers);
  ex.get("beam_size", c.beam_size);
  ex.reject_unknown();

  Section da(file, "data");
  da.get_list("l1s", c.data.l1s, [](const std::string& s) { return parse_l1(s); });
  da.get_list("levels", c.data.levels, [](const std::string& s) { return parse_level(s); });
  da.get("sentences_per_cell", c.data.sentences_per_cell);
  da.get("general_sentences", c.data.general_sentences);
  da.get("general_dev_size", c.data.general_dev_size);
  da.get("train_size", c.data.train_size);
  da.get("dev_size", c.data.dev_size);
  da.get("test_size", c.data.test_size);
  da.get("bpe_merges", c.data.bpe_merges);
  da.get("max_units", c.data.max_units);
  std::string path;
  if (da.has("corpus")) {
    da.get("corpus", path);
    c.data.corpus_path = path;
  } else {
    da.get("corpus", path);
  }
  if (da.has("general_corpus")) {
    da.get("general_corpus", path);
    c.data.general_corpus_path = path;
  } else {
    da.get("general_corpus", path);
  }
  da.reject_unknown();

  Section mo(file, "model");
  std::string encoder_type = "brnn", decoder_type = "rnn";
  mo.get("word_vec_size", c.model.embed_dim);
  mo.get("rnn_size", c.model.hidden_dim);
  mo.get("enc_layers", c.model.enc_layers);
  mo.get("dec_layers", c.model.dec_layers);
  mo.get("dropout", c.model.dropout_p);
  mo.get("word_dropout", c.model.word_dropout_p);
  mo.get("variational", c.model.variational);
  mo.get("max_decode_len", c.model.max_decode_len);
  mo.get("encoder_type", encoder_type);
  mo.get("decoder_type", decoder_type);
  mo.reject_unknown();
  if (encoder_type != "brnn" || decoder_type != "rnn")
    throw ConfigError("only encoder_type = \"brnn\" and decoder_type = \"rnn\" are supported");

  Section pt(file, "pretrain");
  read_train(pt, c.pretrain);
  pt.reject_unknown();

  Section ft(file, "finetune");
  const bool ft_lr_given = ft.has("learning_rate");
  read_train(ft, c.finetune);
  if (!ft_lr_given) c.finetune.learning_rate = c.pretrain.learning_rate / 4.0;
  std::vector<std::string> trainable;
  ft.get("trainable", trainable);
  if (!trainable.empty()) {
    try {
      c.freeze = FreezePolicy::parse(trainable);
    } catch (const Error& e) {
      throw ConfigError(std::string("finetune.trainable: ") + e.what());
    }
  }
  ft.reject_unknown();

  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path, Preset fallback) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  return experiment_config_from(parse_toml(f), fallback);
}

// Report --------------------------------------------------------------------------

const ReportRow* ScenarioReport::find(Scenario s, const SubsetKey& key, std::uint64_t seed) const {
  for (const auto& r : rows)
    if (r.scenario == s && r.key == key && r.seed == seed) return &r;
  return nullptr;
}

std::optional<double> ScenarioReport::mean_f(Scenario s, const SubsetKey& key) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.scenario != s || !(r.key == key)) continue;
    sum += r.metrics.f_beta;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

std::optional<double> ScenarioReport::scenario_mean(
    Scenario s, const std::function<bool(const SubsetKey&)>& filter) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& k : keys) {
    if (filter && !filter(k)) continue;
    if (const auto f = mean_f(s, k)) {
      sum += *f;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

std::vector<std::string> ScenarioReport::missing_cells() const {
  std::vector<std::string> out;
  for (Scenario s : scenarios)
    for (const auto& k : keys)
      if (applicable(s, k))
        for (auto seed : seeds)
          if (!find(s, k, seed))
            out.push_back(std::string(to_string(s)) + "/" + k.name() + "/seed " +
                          std::to_string(seed));
  return out;
}

namespace {

json metrics_json(const MetricReport& m) {
  return {{"tp", m.tp},           {"fp", m.fp},         {"fn", m.fn},
          {"precision", m.precision}, {"recall", m.recall}, {"f_beta", m.f_beta},
          {"beta", m.beta}};
}

MetricReport metrics_from(const json& j) {
  MetricReport m;
  m.tp = j.at("tp");
  m.fp = j.at("fp");
  m.fn = j.at("fn");
  m.precision = j.at("precision");
  m.recall = j.at("recall");
  m.f_beta = j.at("f_beta");
  m.beta = j.at("beta");
  return m;
}

}  // namespace

json to_json(const ScenarioReport& r) {
  json j;
  for (Scenario s : r.scenarios) j["scenarios"].push_back(to_string(s));
  for (const auto& k : r.keys) j["keys"].push_back(k.name());
  j["seeds"] = r.seeds;
  j["rows"] = json::array();
  for (const auto& row : r.rows)
    j["rows"].push_back({{"scenario", to_string(row.scenario)},
                         {"key", row.key.name()},
                         {"seed", row.seed},
                         {"metrics", metrics_json(row.metrics)},
                         {"error_rate", row.error_rate},
                         {"hypotheses", row.hypotheses.string()},
                         {"test_set", row.test_set.string()}});
  return j;
}

ScenarioReport report_from_json(const json& j) {
  try {
    ScenarioReport r;
    for (const auto& s : j.at("scenarios")) r.scenarios.push_back(parse_scenario(s.get<std::string>()));
    for (const auto& k : j.at("keys")) r.keys.push_back(parse_key(k.get<std::string>()));
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& row : j.at("rows"))
      r.rows.push_back({parse_scenario(row.at("scenario").get<std::string>()),
                        parse_key(row.at("key").get<std::string>()), row.at("seed"),
                        metrics_from(row.at("metrics")), row.at("error_rate"),
                        row.at("hypotheses").get<std::string>(),
                        row.at("test_set").get<std::string>()});
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed report: ") + e.what());
  }
}

// Pipeline ------------------------------------------------------------------------

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t text_seed(std::string_view s) {
  return crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size()));
}

// 64-bit content hash (CRC-32 and Adler-32) as 16 hex digits.
std::string content_hash(const json& slice) {
  const std::string s = slice.dump();
  const auto* p = reinterpret_cast<const Bytef*>(s.data());
  const auto n = static_cast<uInt>(s.size());
  const std::uint64_t h = (static_cast<std::uint64_t>(crc32(0L, p, n)) << 32) | adler32(1L, p, n);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json model_json(const ModelConfig& m) {
  return {{"E", m.embed_dim},         {"H", m.hidden_dim},          {"enc", m.enc_layers},
          {"dec", m.dec_layers},      {"dropout", m.dropout_p},     {"word", m.word_dropout_p},
          {"variational", m.variational}};
}

json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch", t.batch_size},
          {"lr", t.learning_rate},
          {"decay", t.start_decay_at},
          {"clip", t.max_grad_norm},
          {"adam", {t.adam_beta1, t.adam_beta2, t.adam_eps}},
          {"patience", t.early_stop_patience ? *t.early_stop_patience : -1},
          {"dropout", t.dropout ? *t.dropout : -1.0}};
}

json file_json(const std::optional<fs::path>& p) {
  if (!p) return nullptr;
  std::error_code ec;
  const auto size = fs::file_size(*p, ec);
  const auto mtime = fs::last_write_time(*p, ec).time_since_epoch().count();
  return {fs::absolute(*p).string(), ec ? 0 : size, static_cast<long long>(mtime)};
}

json profile_json(const GeneratorProfile& p) {
  json cells = json::array();
  for (const auto& c : p.cells)
    cells.push_back({to_string(c.l1), to_string(c.level), c.op_weights, c.errors_per_100, c.share,
                     c.indefinite_drop_share, c.annotated_share, c.preposition_confusions});
  return {{"cells", cells}, {"templates", p.templates}};
}

std::string tag(Scenario s, const SubsetKey& k) {
  return s == Scenario::Unadapted || s == Scenario::Random
             ? std::string(to_string(s))
             : std::string(to_string(s)) + "-" + k.name();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw Error("cannot write " + tmp.string());
    f << text;
    if (!f) throw Error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

Corpus concat_cells(const std::map<SubsetKey, Corpus>& cells, const SubsetKey& key) {
  Corpus out;
  for (const auto& [cell, data] : cells)
    if ((!key.level || key.level == cell.level) && (!key.l1 || key.l1 == cell.l1))
      out.insert(out.end(), data.begin(), data.end());
  return out;
}

// Runs jobs on up to `workers` threads; rethrows the first failure in job
// order after all jobs finish.
void run_jobs(std::vector<std::function<void()>>& jobs, int workers) {
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i; (i = next++) < jobs.size();) {
      try {
        jobs[i]();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::min<int>(workers, static_cast<int>(jobs.size()));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <typename F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const SubsetTooSmall&) {
    throw;
  } catch (const std::exception& e) {
    throw Error("stage " + name + ": " + e.what());
  }
}

struct SeedData {
  Corpus general_train, general_dev;
  std::map<SubsetKey, Corpus> pools, devs, tests;  // per L1-Level cell
};

class Runner {
 public:
  Runner(const ExperimentConfig& c, const ExperimentHooks& h) : cfg_(c), hooks_(h) {}

  std::vector<ReportRow> run_seed(std::uint64_t seed);

 private:
  void say(const std::string& msg) {
    if (!hooks_.progress) return;
    std::lock_guard lock(mu_);
    hooks_.progress(msg);
  }

  SeedData load_data(std::uint64_t seed);
  BpeModel subword_model(const SeedData& d, const std::string& hash);
  ModelParams<float> base_model(const SeedData& d, const BpeModel& bpe, std::uint64_t seed,
                                const std::string& hash, const fs::path& seed_dir);
  Corpus adaptation_data(const std::map<SubsetKey, Corpus>& cells, Scenario s,
                         const SubsetKey& key, std::size_t n, std::uint64_t seed) const;
  Corpus test_data(const SeedData& d, const SubsetKey& key, std::uint64_t seed) const;

  const ExperimentConfig& cfg_;
  const ExperimentHooks& hooks_;
  std::mutex mu_;
};

SeedData Runner::load_data(std::uint64_t seed) {
  const auto& dc = cfg_.data;
  SeedData d;
  const Corpus learner = stage("corpus", [&] {
    if (dc.corpus_path) return load_corpus(*dc.corpus_path);
    GeneratorProfile p = dc.learner_profile ? *dc.learner_profile
                                            : default_profile(dc.l1s, dc.levels, 0);
    p.seed = mix(seed, 1);
    const std::size_t cells = dc.learner_profile ? p.cells.size() : dc.l1s.size() * dc.levels.size();
    return generate_corpus(p, dc.sentences_per_cell * cells);
  });
  Corpus general = stage("corpus", [&] {
    if (dc.general_corpus_path) return load_corpus(*dc.general_corpus_path);
    return generate_corpus(general_profile(mix(seed, 2)), dc.general_sentences);
  });
  stage("split", [&] {
    const Split g = split(general, general.size() - dc.general_dev_size, dc.general_dev_size, 0,
                          mix(seed, 3));
    d.general_train = g.train;
    d.general_dev = g.dev;
    const std::size_t need = dc.train_size + dc.dev_size + dc.test_size;
    for (L1 l1 : dc.l1s) {
      for (Level lv : dc.levels) {
        const SubsetKey key = make_key(l1, lv);
        const Corpus sub = select_subset(learner, key, need);
        Split s = split(sub, sub.size() - dc.dev_size - dc.test_size, dc.dev_size, dc.test_size,
                        mix(seed, text_seed(key.name())));
        d.pools[key] = std::move(s.train);
        d.devs[key] = std::move(s.dev);
        d.tests[key] = std::move(s.test);
      }
    }
    return 0;
  });
  return d;
}

BpeModel Runner::subword_model(const SeedData& d, const std::string& hash) {
  const fs::path path = cfg_.resolved_cache_dir() / ("bpe-" + hash + ".txt");
  return stage("bpe", [&] {
    if (fs::exists(path)) {
      say("bpe: cache hit " + path.string());
      return BpeModel::load(path);
    }
    say("bpe: learning " + std::to_string(cfg_.data.bpe_merges) + " merges");
    BpeModel bpe = learn_bpe(bpe_stream(d.general_train), cfg_.data.bpe_merges);
    std::ostringstream out;
    bpe.save(out);
    write_text(path, out.str());
    return bpe;
  });
}

ModelParams<float> Runner::base_model(const SeedData& d, const BpeModel& bpe, std::uint64_t seed,
                                      const std::string& hash, const fs::path& seed_dir) {
  const fs::path path = cfg_.resolved_cache_dir() / ("base-" + hash + ".ckpt");
  return stage("train-base", [&] {
    if (fs::exists(path)) {
      say("train-base: cache hit " + path.string());
      return load_checkpoint<float>(path);
    }
    ModelConfig mc = cfg_.model;
    mc.vocab_size = static_cast<int>(bpe.vocab_size());
    TrainConfig tc = cfg_.pretrain;
    tc.seed = mix(seed, 4);
    const ParallelData train = encode_corpus(bpe, d.general_train, cfg_.data.max_units);
    const ParallelData dev = encode_corpus(bpe, d.general_dev, cfg_.data.max_units);
    fs::create_directories(seed_dir / "logs");
    std::ofstream log(seed_dir / "logs" / "base.jsonl");
    TrainHooks th;
    th.log = &log;
    th.on_epoch = [&](const EpochRecord& r) {
      say("train-base: epoch " + std::to_string(r.epoch) + " train " +
          std::to_string(r.train_loss) + " dev " + std::to_string(r.dev_loss));
    };
    const TrainResult res = train_base(train, dev, mc, tc, th);
    fs::create_directories(path.parent_path());
    save_checkpoint(res.params, fs::path(path.string() + ".tmp"));
    fs::rename(path.string() + ".tmp", path);
    return res.params;
  });
}

Corpus Runner::adaptation_data(const std::map<SubsetKey, Corpus>& cells, Scenario s,
                               const SubsetKey& key, std::size_t n, std::uint64_t seed) const {
  if (s == Scenario::Random) {
    return sample_random(concat_cells(cells, {}), n, default_sample_weights(), seed);
  }
  const Corpus pool = concat_cells(cells, key);
  if (s == Scenario::L1Level) {
    if (pool.size() < n) throw SubsetTooSmall(key.name(), pool.size(), n);
    return Corpus(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
  }
  return sample_uniform(pool, n, seed);
}

Corpus Runner::test_data(const SeedData& d, const SubsetKey& key, std::uint64_t seed) const {
  if (key.is_l1_level()) return d.tests.at(key);
  return sample_uniform(concat_cells(d.tests, key), cfg_.data.test_size,
                        mix(seed, text_seed("test-" + key.name())));
}

std::vector<ReportRow> Runner::run_seed(std::uint64_t seed) {
  const fs::path seed_dir = cfg_.out_dir / ("seed-" + std::to_string(seed));
  say("seed " + std::to_string(seed) + ": data");
  const SeedData d = load_data(seed);

  json data_slice = {{"seed", seed},
                     {"general", file_json(cfg_.data.general_corpus_path)},
                     {"general_profile", profile_json(general_profile(0))},
                     {"general_n", cfg_.data.general_sentences},
                     {"general_dev", cfg_.data.general_dev_size}};
  const std::string bpe_hash =
      content_hash({{"stage", "bpe"}, {"data", data_slice}, {"merges", cfg_.data.bpe_merges}});
  const BpeModel bpe = subword_model(d, bpe_hash);
  const std::string base_hash =
      content_hash({{"stage", "base"},
                    {"bpe", bpe_hash},
                    {"model", model_json(cfg_.model)},
                    {"train", train_json(cfg_.pretrain)},
                    {"max_units", cfg_.data.max_units}});
  const ModelParams<float> base = base_model(d, bpe, seed, base_hash, seed_dir);

  const json learner_slice = {
      {"seed", seed},
      {"corpus", file_json(cfg_.data.corpus_path)},
      {"profile", cfg_.data.learner_profile ? profile_json(*cfg_.data.learner_profile) : json()},
      {"l1s", [&] {
         json a = json::array();
         for (L1 l : cfg_.data.l1s) a.push_back(to_string(l));
         return a;
       }()},
      {"levels", [&] {
         json a = json::array();
         for (Level l : cfg_.data.levels) a.push_back(to_string(l));
         return a;
       }()},
      {"per_cell", cfg_.data.sentences_per_cell},
      {"sizes", {cfg_.data.train_size, cfg_.data.dev_size, cfg_.data.test_size}}};

  // Models to build: (scenario, adaptation key); Unadapted is the base model.
  const auto keys = cfg_.resolved_keys();
  std::vector<Scenario> scenarios;
  for (Scenario s : cfg_.scenarios)
    if (std::find(scenarios.begin(), scenarios.end(), s) == scenarios.end()) scenarios.push_back(s);
  std::map<std::string, std::pair<Scenario, SubsetKey>> wanted;
  for (Scenario s : scenarios)
    for (const auto& k : keys)
      if (applicable(s, k) && s != Scenario::Unadapted) {
        const SubsetKey ak = adaptation_key(s, k);
        wanted.emplace(tag(s, ak), std::make_pair(s, ak));
      }

  std::map<std::string, std::pair<std::string, ModelParams<float>>> models;  // tag -> hash, params
  models.emplace("Unadapted", std::make_pair(base_hash, base));
  std::vector<std::function<void()>> jobs;
  std::vector<std::string> tags;
  for (const auto& [t, sk] : wanted) tags.push_back(t);
  std::vector<std::pair<std::string, ModelParams<float>>> built(tags.size());
  for (std::size_t i = 0; i < tags.size(); ++i) {
    jobs.push_back([&, i] {
      const auto& [s, ak] = wanted.at(tags[i]);
      const std::uint64_t job_seed = mix(seed, text_seed(tags[i]));
      const std::string hash = content_hash({{"stage", "finetune"},
                                             {"base", base_hash},
                                             {"learner", learner_slice},
                                             {"tag", tags[i]},
                                             {"train", train_json(cfg_.finetune)},
                                             {"freeze", [&] {
                                                json a = json::array();
                                                for (Group g : cfg_.freeze.trainable)
                                                  a.push_back(to_string(g));
                                                return a;
                                              }()}});
      const fs::path path = cfg_.resolved_cache_dir() / ("ft-" + hash + ".ckpt");
      built[i] = stage("fine-tune " + tags[i], [&] {
        if (fs::exists(path)) {
          say("fine-tune " + tags[i] + ": cache hit");
          return std::make_pair(hash, load_checkpoint<float>(path));
        }
        say("fine-tune " + tags[i]);
        const Corpus train = adaptation_data(d.pools, s, ak, cfg_.data.train_size, job_seed);
        const Corpus dev = adaptation_data(d.devs, s, ak, cfg_.data.dev_size, mix(job_seed, 1));
        TrainConfig tc = cfg_.finetune;
        tc.seed = job_seed;
        fs::create_directories(seed_dir / "logs");
        std::ofstream log(seed_dir / "logs" / ("finetune-" + tags[i] + ".jsonl"));
        TrainHooks th;
        th.log = &log;
        const TrainResult res =
            fine_tune(base, encode_corpus(bpe, train, cfg_.data.max_units),
                      encode_corpus(bpe, dev, cfg_.data.max_units), tc, cfg_.freeze, th);
        fs::create_directories(path.parent_path());
        save_checkpoint(res.params, fs::path(path.string() + ".tmp"));
        fs::rename(path.string() + ".tmp", path);
        return std::make_pair(hash, res.params);
      });
    });
  }
  run_jobs(jobs, cfg_.workers);
  for (std::size_t i = 0; i < tags.size(); ++i) models.emplace(tags[i], std::move(built[i]));

  // Decoding and scoring.
  struct Cell {
    Scenario s;
    SubsetKey key;
  };
  std::vector<Cell> cells;
  for (const auto& k : keys)
    for (Scenario s : scenarios)
      if (applicable(s, k)) cells.push_back({s, k});
  std::map<std::string, Corpus> tests;
  for (const auto& k : keys) {
    tests[k.name()] = stage("test " + k.name(), [&] { return test_data(d, k, seed); });
    std::ostringstream out;
    write_corpus(out, tests[k.name()]);
    write_text(seed_dir / "test" / (k.name() + ".jsonl"), out.str());
  }
  std::vector<ReportRow> rows(cells.size());
  jobs.clear();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    jobs.push_back([&, i] {
      const auto [s, k] = cells[i];
      const std::string mtag = s == Scenario::Unadapted ? "Unadapted" : tag(s, adaptation_key(s, k));
      const auto& [mhash, params] = models.at(mtag);
      const Corpus& test = tests.at(k.name());
      const fs::path cached = cfg_.resolved_cache_dir() /
                              ("hyp-" +
                               content_hash({{"model", mhash},
                                             {"learner", learner_slice},
                                             {"key", k.name()},
                                             {"beam", cfg_.beam_size},
                                             {"max_len", params.config.max_decode_len}}) +
                               ".txt");
      const fs::path hyp_path = seed_dir / "hyp" / (std::string(to_string(s)) + "-" + k.name() + ".txt");
      rows[i] = stage("decode " + mtag + " on " + k.name(), [&] {
        std::vector<Tokens> hyps;
        if (fs::exists(cached)) {
          hyps = read_hypotheses(cached);
        } else {
          say("decode " + mtag + " on " + k.name());
          std::vector<std::vector<int>> srcs;
          for (const auto& sent : test) srcs.push_back(bpe.encode(sent.source, cfg_.data.max_units));
          const int max_len = params.config.max_decode_len;
          if (cfg_.beam_size == 1) {
            for (std::size_t b = 0; b < srcs.size(); b += 64) {
              const std::vector<std::vector<int>> chunk(
                  srcs.begin() + static_cast<std::ptrdiff_t>(b),
                  srcs.begin() + static_cast<std::ptrdiff_t>(std::min(srcs.size(), b + 64)));
              for (const auto& ids : decode_greedy_batch(params, chunk, max_len))
                hyps.push_back(bpe.decode(ids));
            }
          } else {
            for (const auto& ids : srcs)
              hyps.push_back(bpe.decode(decode_beam(params, ids, cfg_.beam_size, max_len)));
          }
          write_hypotheses(cached, hyps);
        }
        write_hypotheses(hyp_path, hyps);
        ReportRow row{s, k, seed, score_corpus(test, hyps), error_rate(test), hyp_path,
                      seed_dir / "test" / (k.name() + ".jsonl")};
        return row;
      });
    });
  }
  run_jobs(jobs, cfg_.workers);
  return rows;
}

}  // namespace

ScenarioReport run_experiment(const ExperimentConfig& config, const ExperimentHooks& hooks) {
  config.validate();
  ScenarioReport report;
  for (Scenario s : config.scenarios)
    if (std::find(report.scenarios.begin(), report.scenarios.end(), s) == report.scenarios.end())
      report.scenarios.push_back(s);
  report.keys = config.resolved_keys();
  report.seeds = config.seeds;
  Runner runner(config, hooks);
  for (auto seed : config.seeds) {
    auto rows = runner.run_seed(seed);
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  }
  write_text(config.out_dir / "report.json", to_json(report).dump(2) + "\n");
  return report;
}

}  // namespace gecadapt
