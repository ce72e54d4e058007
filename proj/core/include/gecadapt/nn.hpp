#pragma once

// Attentional LSTM encoder-decoder with hand-written reverse-mode gradients.
//
// Sequences in a batch are laid out column-wise: time step t of batch entry b
// is column t * B + b. The encoder is a bidirectional LSTM stack whose final
// states are linearly bridged into the decoder; the decoder feeds its previous
// attentional output back as input and attends additively over the encoder
// memory. LSTM gate order is (input, forget, candidate, output).

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace gecadapt {

struct ModelConfig {
  int embed_dim = 64;
  int hidden_dim = 64;  // per encoder direction, and decoder width
  int enc_layers = 1;
  int dec_layers = 1;
  int vocab_size = 0;
  double dropout_p = 0.1;
  double word_dropout_p = 0.1;
  bool variational = true;
  int max_decode_len = 80;

  // ConfigError on non-positive sizes or probabilities outside [0, 1).
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

ModelConfig desk_model_config(int vocab_size);
ModelConfig paper_model_config(int vocab_size);

enum class Group { SrcEmbed, TgtEmbed, Encoder, Decoder };
inline constexpr Group kAllGroups[] = {Group::SrcEmbed, Group::TgtEmbed, Group::Encoder,
                                       Group::Decoder};
std::string_view to_string(Group g);
Group parse_group(std::string_view s);

struct TensorSpec {
  std::string name;
  Group group;
  int rows;
  int cols;
  enum class Init { Xavier, Zero, LstmBias } init;
};

// Names, groups and shapes of every tensor for a configuration. The bridge
// belongs to the encoder group; attention and output layers to the decoder.
class Layout {
 public:
  explicit Layout(const ModelConfig& config);

  const std::vector<TensorSpec>& specs() const { return specs_; }
  std::size_t size() const { return specs_.size(); }
  std::size_t find(std::string_view name) const;  // ValidationError if absent

  std::size_t src_embed, tgt_embed;
  // Indexed [layer][direction], direction 0 = left-to-right.
  std::vector<std::array<std::size_t, 2>> enc_wx, enc_wh, enc_b;
  // Indexed by decoder layer.
  std::vector<std::size_t> bridge_hw, bridge_hb, bridge_cw, bridge_cb;
  std::vector<std::size_t> dec_wx, dec_wh, dec_b;
  std::size_t att_wm, att_wq, att_b, att_v;
  std::size_t comb_w, comb_b;
  std::size_t out_w, out_b;

 private:
  std::size_t add(std::string name, Group g, int rows, int cols, TensorSpec::Init init);
  std::vector<TensorSpec> specs_;
};

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

// Also used for gradients and optimizer moments (same shapes).
template <typename T>
struct ModelParams {
  ModelConfig config;
  std::shared_ptr<const Layout> layout;
  std::vector<Mat<T>> tensors;
  // Bumped by every in-place update; caches from older versions are stale.
  std::uint64_t version = 0;

  Mat<T>& operator[](std::size_t i) { return tensors[i]; }
  const Mat<T>& operator[](std::size_t i) const { return tensors[i]; }
  Group group(std::size_t i) const { return layout->specs()[i].group; }
  const std::string& name(std::size_t i) const { return layout->specs()[i].name; }

  // Same structure, all zeros.
  ModelParams zeros_like() const;
  bool all_finite() const;
};

// Xavier-uniform matrices, zero biases, forget-gate biases 1. Deterministic.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

// Inverted-dropout keep masks for one batch (entries 0 or 1/(1-p)). Per-step
// vectors hold one (rows x B) mask per time step; with variational dropout the
// input and recurrent masks are drawn once per sequence and repeated.
template <typename T>
struct DropoutMasks {
  int batch = 0, src_len = 0, tgt_len = 0;
  Mat<T> word;                                        // src_len x B
  std::vector<std::vector<Mat<T>>> enc_input;         // [layer][t]
  std::vector<std::array<std::vector<Mat<T>>, 2>> enc_recurrent;  // [layer][dir][t]
  std::vector<std::vector<Mat<T>>> dec_input;         // [layer][t]
  std::vector<std::vector<Mat<T>>> dec_recurrent;     // [layer][t]
  std::vector<Mat<T>> output;                         // [t], on the attentional state
};

// `tgt_len` counts decoder steps (target tokens + EOS).
template <typename T>
DropoutMasks<T> apply_dropout_masks(const ModelConfig& config, std::uint64_t seed, int batch,
                                    int src_len, int tgt_len);

// Unpadded id sequences. Targets exclude BOS/EOS; both are added internally.
struct Batch {
  std::vector<std::vector<int>> src;
  std::vector<std::vector<int>> tgt;

  int max_src_len() const;
  int max_tgt_steps() const;  // longest target + 1
};

template <typename T>
struct ForwardCache;

template <typename T>
struct ForwardResult {
  T loss;  // mean NLL over non-pad target steps (EOS included)
  std::size_t tokens;
  std::shared_ptr<ForwardCache<T>> cache;
};

// Teacher-forced loss. `masks` null means no dropout. ValidationError on ids
// outside the vocabulary, empty batches, or mask shapes that do not fit.
template <typename T>
ForwardResult<T> forward_loss(const ModelParams<T>& params, const Batch& batch,
                              const DropoutMasks<T>* masks = nullptr);

// Gradients of the forward loss. Groups not listed in `need` are left zero
// (their error signal still flows through). Error when the cache was already
// consumed or the parameters changed since the forward pass.
template <typename T>
ModelParams<T> backward(ForwardCache<T>& cache, std::span<const Group> need = kAllGroups);

// Sum of log-probabilities of `tgt` followed by EOS, no dropout.
template <typename T>
double sequence_log_prob(const ModelParams<T>& params, const std::vector<int>& src,
                         const std::vector<int>& tgt);

// Output ids exclude BOS and EOS. At most `max_len` tokens are produced.
template <typename T>
std::vector<int> decode_greedy(const ModelParams<T>& params, const std::vector<int>& src,
                               int max_len);
template <typename T>
std::vector<std::vector<int>> decode_greedy_batch(const ModelParams<T>& params,
                                                  const std::vector<std::vector<int>>& srcs,
                                                  int max_len);

struct BeamHypothesis {
  std::vector<int> tokens;
  double log_prob = 0.0;
  double score = 0.0;  // log_prob / decoded steps; EOS counts only when emitted
};

// Beam search on length-normalized log-probability. The greedy continuation
// always stays a candidate, so the result never scores below greedy decoding;
// beam == 1 is exactly greedy. ValidationError when beam < 1.
template <typename T>
BeamHypothesis decode_beam_scored(const ModelParams<T>& params, const std::vector<int>& src,
                                  int beam, int max_len);
template <typename T>
std::vector<int> decode_beam(const ModelParams<T>& params, const std::vector<int>& src, int beam,
                             int max_len);

// Binary checkpoint: magic line, JSON header (config, tensor names and shapes,
// CRC-32 of the payload), then the raw float64 payload.
template <typename T>
void save_checkpoint(const ModelParams<T>& params, const std::filesystem::path& path);
// ParseError on a damaged file or checksum mismatch; ValidationError when the
// stored shapes disagree with the stored config.
template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path);

template <typename T>
void save_checkpoint(const ModelParams<T>& params, std::ostream& out);
template <typename T>
ModelParams<T> load_checkpoint(std::istream& in);

// Cast between precisions (same layout).
template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p);

}  // namespace gecadapt
