#pragma once

// Adam with global-norm clipping, the epoch-wise halving schedule, base
// training with dev-loss early stopping, and fine-tuning of a chosen subset of
// parameter groups.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gecadapt/bpe.hpp"
#include "gecadapt/corpus.hpp"
#include "gecadapt/nn.hpp"

namespace gecadapt {

struct TrainConfig {
  int epochs = 15;
  int batch_size = 32;
  double learning_rate = 0.001;
  int start_decay_at = 6;
  double max_grad_norm = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Stop after this many epochs without a dev-loss improvement; unset = never.
  std::optional<int> early_stop_patience;
  // Replaces the model's layer and word dropout for this stage; unset = keep.
  std::optional<double> dropout;
  std::uint64_t seed = 1;

  // ConfigError when epochs, batch_size < 1, learning_rate < 0 or
  // max_grad_norm <= 0. A zero learning rate is allowed (null update).
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Published pre-training block, and fine-tuning derived from it: batch 128,
// learning rate divided by four, first halving at epoch 16, 10 epochs.
TrainConfig paper_pretrain_config();
TrainConfig paper_finetune_config();
// Small CPU model: smaller batches; pre-training halves from epoch 11 and runs
// without dropout.
TrainConfig desk_pretrain_config();
TrainConfig desk_finetune_config();
// Fine-tuning settings derived from a base config: learning rate / 4, no early
// stopping, first halving after the 10-epoch budget, model dropout.
TrainConfig derive_finetune_config(const TrainConfig& base, int batch_size);

// lr0 * 0.5^max(0, epoch - start_decay_at + 1). ValidationError for epoch < 1.
double lr_at_epoch(const TrainConfig& config, int epoch);

// Parameter groups that an update may change.
struct FreezePolicy {
  std::vector<Group> trainable;

  static FreezePolicy all();
  // Source embeddings and encoder (bridge included); decoder side fixed.
  static FreezePolicy adaptation();
  static FreezePolicy parse(std::span<const std::string> names);

  bool trains(Group g) const;
  // ValidationError when empty.
  void validate() const;
};

template <typename T>
struct OptimState {
  ModelParams<T> m;  // first moments, shaped like the parameters
  ModelParams<T> v;  // second moments
  std::uint64_t step = 0;

  static OptimState zeros_like(const ModelParams<T>& params);
};

// Scales every gradient by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the norm before clipping. DivergenceError on NaN or Inf.
template <typename T>
double clip_gradients(ModelParams<T>& grads, double max_norm);

// Bias-corrected Adam on the trainable groups; frozen tensors and their
// moments are not touched. Increments state.step and params.version.
// ValidationError when shapes disagree.
template <typename T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, OptimState<T>& state,
               double lr, const FreezePolicy& freeze, const TrainConfig& config = {});

// Subword ids of source and target sides.
struct ParallelData {
  std::vector<std::vector<int>> src;
  std::vector<std::vector<int>> tgt;

  std::size_t size() const { return src.size(); }
};

ParallelData encode_corpus(const BpeModel& bpe, std::span<const AnnotatedSentence> corpus,
                           std::size_t max_units = 60);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double dev_loss = 0.0;  // NaN when no dev data was given
  double wallclock = 0.0;  // seconds since training started
};

// One JSON object per line: epoch, lr, train_loss, dev_loss, wallclock.
std::string to_jsonl(const EpochRecord& r);

struct TrainResult {
  ModelParams<float> params;
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // epoch whose parameters were returned
};

struct TrainHooks {
  std::ostream* log = nullptr;  // JSONL epoch records
  std::function<void(const EpochRecord&)> on_epoch;
};

// Mean per-token NLL without dropout.
double mean_loss(const ModelParams<float>& params, const ParallelData& data,
                 int batch_size = 64);

// All groups trainable, dropout from the model config, seeded shuffling each
// epoch. Returns the parameters of the epoch with the lowest dev loss.
// ValidationError on empty data; DivergenceError naming epoch and step.
TrainResult train_base(const ParallelData& train, const ParallelData& dev,
                       const ModelConfig& model_config, const TrainConfig& config,
                       const TrainHooks& hooks = {});

// Continues from `base` for exactly config.epochs epochs (no early stopping)
// and returns the final parameters. Only groups in `freeze` change. `dev` may
// be empty, in which case dev_loss is NaN in the history.
TrainResult fine_tune(const ModelParams<float>& base, const ParallelData& train,
                      const ParallelData& dev, const TrainConfig& config,
                      const FreezePolicy& freeze, const TrainHooks& hooks = {});

}  // namespace gecadapt
