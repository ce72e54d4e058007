#include "gecadapt/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include <nlohmann/json.hpp>

#include "gecadapt/error.hpp"

namespace gecadapt {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be finite and >= 0");
  if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be > 0");
  if (start_decay_at < 1) throw ConfigError("start_decay_at must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) ||
      !(adam_eps > 0.0))
    throw ConfigError("Adam betas must lie in [0, 1) and epsilon must be > 0");
  if (early_stop_patience && *early_stop_patience < 0)
    throw ConfigError("early_stop_patience must be >= 0");
  if (dropout && !(*dropout >= 0.0 && *dropout < 1.0))
    throw ConfigError("dropout must lie in [0, 1)");
}

TrainConfig paper_pretrain_config() {
  TrainConfig c;
  c.epochs = 15;
  c.batch_size = 296;
  c.learning_rate = 0.001;
  c.start_decay_at = 6;
  c.max_grad_norm = 1.0;
  return c;
}

TrainConfig derive_finetune_config(const TrainConfig& base, int batch_size) {
  TrainConfig c = base;
  c.epochs = 10;
  c.batch_size = batch_size;
  c.learning_rate = base.learning_rate / 4.0;
  c.start_decay_at = 16;
  c.early_stop_patience.reset();
  c.dropout.reset();
  return c;
}

TrainConfig paper_finetune_config() { return derive_finetune_config(paper_pretrain_config(), 128); }

TrainConfig desk_pretrain_config() {
  TrainConfig c = paper_pretrain_config();
  c.batch_size = 32;
  // The small corpus gives far fewer updates per epoch; halving from epoch 6
  // can freeze the model before attention has formed.
  c.start_decay_at = 11;
  // At 64 units, dropout on every layer, the source words and each step keeps
  // the base from fitting the general corpus; fine-tuning keeps it.
  c.dropout = 0.0;
  return c;
}

TrainConfig desk_finetune_config() { return derive_finetune_config(desk_pretrain_config(), 16); }

double lr_at_epoch(const TrainConfig& config, int epoch) {
  if (epoch < 1) throw ValidationError("epochs are numbered from 1");
  const int halvings = std::max(0, epoch - config.start_decay_at + 1);
  return std::ldexp(config.learning_rate, -halvings);
}

FreezePolicy FreezePolicy::all() { return {{std::begin(kAllGroups), std::end(kAllGroups)}}; }

FreezePolicy FreezePolicy::adaptation() { return {{Group::SrcEmbed, Group::Encoder}}; }

FreezePolicy FreezePolicy::parse(std::span<const std::string> names) {
  FreezePolicy p;
  for (const auto& n : names) {
    const Group g = parse_group(n);
    if (!p.trains(g)) p.trainable.push_back(g);
  }
  p.validate();
  return p;
}

bool FreezePolicy::trains(Group g) const {
  return std::find(trainable.begin(), trainable.end(), g) != trainable.end();
}

void FreezePolicy::validate() const {
  if (trainable.empty()) throw ValidationError("freeze policy must leave a group trainable");
}

template <typename T>
OptimState<T> OptimState<T>::zeros_like(const ModelParams<T>& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

template <typename T>
double clip_gradients(ModelParams<T>& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ValidationError("max_norm must be > 0");
  double sq = 0.0;
  for (const auto& g : grads.tensors) sq += g.template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient norm");
  if (norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto& g : grads.tensors) g *= scale;
  }
  return norm;
}

template <typename T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, OptimState<T>& state,
               double lr, const FreezePolicy& freeze, const TrainConfig& config) {
  const std::size_t n = params.tensors.size();
  if (grads.tensors.size() != n || state.m.tensors.size() != n || state.v.tensors.size() != n)
    throw ValidationError("parameter, gradient and moment tensor counts differ");
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = params[i];
    if (grads[i].rows() != p.rows() || grads[i].cols() != p.cols() ||
        state.m[i].rows() != p.rows() || state.m[i].cols() != p.cols() ||
        state.v[i].rows() != p.rows() || state.v[i].cols() != p.cols())
      throw ValidationError("shape mismatch for tensor " + params.name(i));
  }
  ++state.step;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(config.adam_eps);
  const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
  for (std::size_t i = 0; i < n; ++i) {
    if (!freeze.trains(params.group(i))) continue;
    auto m = state.m[i].array();
    auto v = state.v[i].array();
    const auto g = grads[i].array();
    m = tb1 * m + (T(1) - tb1) * g;
    v = tb2 * v + (T(1) - tb2) * g * g;
    params[i].array() -= step_size * m / ((v * inv_bc2).sqrt() + eps);
  }
  ++params.version;
}

ParallelData encode_corpus(const BpeModel& bpe, std::span<const AnnotatedSentence> corpus,
                           std::size_t max_units) {
  ParallelData d;
  d.src.reserve(corpus.size());
  d.tgt.reserve(corpus.size());
  for (const auto& s : corpus) {
    d.src.push_back(bpe.encode(s.source, max_units));
    d.tgt.push_back(bpe.encode(s.target, max_units));
  }
  return d;
}

std::string to_jsonl(const EpochRecord& r) {
  nlohmann::json j = {{"epoch", r.epoch}, {"lr", r.lr}, {"train_loss", r.train_loss},
                      {"wallclock", r.wallclock}};
  // JSON has no NaN; a missing dev set is written as null.
  j["dev_loss"] = std::isfinite(r.dev_loss) ? nlohmann::json(r.dev_loss) : nlohmann::json();
  return j.dump();
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Batch make_batch(const ParallelData& data, std::span<const std::size_t> idx) {
  Batch b;
  b.src.reserve(idx.size());
  b.tgt.reserve(idx.size());
  for (std::size_t i : idx) {
    b.src.push_back(data.src[i]);
    b.tgt.push_back(data.tgt[i]);
  }
  return b;
}

void check_data(const ParallelData& d, const char* what) {
  if (d.src.size() != d.tgt.size())
    throw ValidationError(std::string(what) + " sides have different lengths");
  if (d.src.empty()) throw ValidationError(std::string(what) + " data is empty");
}

struct LoopSpec {
  const ParallelData* train;
  const ParallelData* dev;
  TrainConfig config;
  FreezePolicy freeze;
  bool early_stopping;
  const TrainHooks* hooks;
};

TrainResult run_training(ModelParams<float> params, const LoopSpec& spec) {
  const TrainConfig& cfg = spec.config;
  cfg.validate();
  spec.freeze.validate();
  check_data(*spec.train, "training");
  const bool have_dev = spec.dev && spec.dev->size() > 0;
  if (have_dev) check_data(*spec.dev, "dev");
  ModelConfig mc = params.config;
  if (cfg.dropout) mc.dropout_p = mc.word_dropout_p = *cfg.dropout;

  std::vector<Group> need = spec.freeze.trainable;
  OptimState<float> state = OptimState<float>::zeros_like(params);
  const auto t0 = std::chrono::steady_clock::now();

  TrainResult result;
  result.params = params;
  double best_dev = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<std::size_t> order(spec.train->size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    std::mt19937_64 rng(mix(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t token_sum = 0;
    int step = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size), ++step) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const Batch batch =
          make_batch(*spec.train, std::span<const std::size_t>(order).subspan(start, end - start));
      const auto masks = apply_dropout_masks<float>(
          mc, mix(mix(cfg.seed, static_cast<std::uint64_t>(epoch)), static_cast<std::uint64_t>(step)),
          static_cast<int>(batch.src.size()), std::max(1, batch.max_src_len()),
          batch.max_tgt_steps());
      auto fwd = forward_loss(params, batch, &masks);
      const auto where = " at epoch " + std::to_string(epoch) + ", step " + std::to_string(step + 1);
      if (!std::isfinite(fwd.loss)) throw DivergenceError("non-finite training loss" + where);
      auto grads = backward(*fwd.cache, need);
      try {
        clip_gradients(grads, cfg.max_grad_norm);
      } catch (const DivergenceError& e) {
        throw DivergenceError(e.what() + where);
      }
      adam_step(params, grads, state, lr, spec.freeze, cfg);
      loss_sum += static_cast<double>(fwd.loss) * static_cast<double>(fwd.tokens);
      token_sum += fwd.tokens;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(token_sum);
    rec.dev_loss = have_dev ? mean_loss(params, *spec.dev) : std::numeric_limits<double>::quiet_NaN();
    rec.wallclock =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (have_dev && !std::isfinite(rec.dev_loss))
      throw DivergenceError("non-finite dev loss at epoch " + std::to_string(epoch));
    result.history.push_back(rec);
    if (spec.hooks->log) *spec.hooks->log << to_jsonl(rec) << '\n' << std::flush;
    if (spec.hooks->on_epoch) spec.hooks->on_epoch(rec);

    if (!spec.early_stopping || !have_dev) {
      result.params = params;
      result.best_epoch = epoch;
      continue;
    }
    if (rec.dev_loss < best_dev) {
      best_dev = rec.dev_loss;
      since_best = 0;
      result.params = params;
      result.best_epoch = epoch;
    } else if (cfg.early_stop_patience && ++since_best > *cfg.early_stop_patience) {
      break;
    }
  }
  result.params.version = 0;
  return result;
}

}  // namespace

double mean_loss(const ModelParams<float>& params, const ParallelData& data, int batch_size) {
  check_data(data, "evaluation");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  double sum = 0.0;
  std::size_t tokens = 0;
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(batch_size));
    const auto r = forward_loss(params, make_batch(data, std::span(idx).subspan(start, end - start)));
    sum += static_cast<double>(r.loss) * static_cast<double>(r.tokens);
    tokens += r.tokens;
  }
  return sum / static_cast<double>(tokens);
}

TrainResult train_base(const ParallelData& train, const ParallelData& dev,
                       const ModelConfig& model_config, const TrainConfig& config,
                       const TrainHooks& hooks) {
  check_data(dev, "dev");
  return run_training(init_params<float>(model_config, config.seed),
                      {&train, &dev, config, FreezePolicy::all(), true, &hooks});
}

TrainResult fine_tune(const ModelParams<float>& base, const ParallelData& train,
                      const ParallelData& dev, const TrainConfig& config,
                      const FreezePolicy& freeze, const TrainHooks& hooks) {
  return run_training(base, {&train, &dev, config, freeze, false, &hooks});
}

template struct OptimState<float>;
template struct OptimState<double>;
template double clip_gradients<float>(ModelParams<float>&, double);
template double clip_gradients<double>(ModelParams<double>&, double);
template void adam_step<float>(ModelParams<float>&, const ModelParams<float>&, OptimState<float>&,
                               double, const FreezePolicy&, const TrainConfig&);
template void adam_step<double>(ModelParams<double>&, const ModelParams<double>&,
                                OptimState<double>&, double, const FreezePolicy&,
                                const TrainConfig&);

}  // namespace gecadapt
