#include "gecadapt/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "gecadapt/bpe.hpp"
#include "gecadapt/error.hpp"

namespace gecadapt {

void ModelConfig::validate() const {
  if (embed_dim < 1 || hidden_dim < 1 || enc_layers < 1 || dec_layers < 1 || vocab_size < 1)
    throw ConfigError("model dimensions, layer counts and vocabulary size must be >= 1");
  if (vocab_size <= BpeModel::kNumSpecials)
    throw ConfigError("vocabulary must hold more than the special symbols");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0) || !(word_dropout_p >= 0.0 && word_dropout_p < 1.0))
    throw ConfigError("dropout probabilities must lie in [0, 1)");
  if (max_decode_len < 1) throw ConfigError("max_decode_len must be >= 1");
}

ModelConfig desk_model_config(int vocab_size) {
  ModelConfig c;
  c.embed_dim = 64;
  c.hidden_dim = 64;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig paper_model_config(int vocab_size) {
  ModelConfig c;
  c.embed_dim = 500;
  c.hidden_dim = 500;
  c.enc_layers = 3;
  c.dec_layers = 3;
  c.vocab_size = vocab_size;
  return c;
}

std::string_view to_string(Group g) {
  switch (g) {
    case Group::SrcEmbed: return "src_embed";
    case Group::TgtEmbed: return "tgt_embed";
    case Group::Encoder: return "encoder";
    case Group::Decoder: return "decoder";
  }
  return "?";
}

Group parse_group(std::string_view s) {
  for (Group g : kAllGroups)
    if (to_string(g) == s) return g;
  throw ValidationError("unknown parameter group '" + std::string(s) + "'");
}

std::size_t Layout::add(std::string name, Group g, int rows, int cols, TensorSpec::Init init) {
  specs_.push_back({std::move(name), g, rows, cols, init});
  return specs_.size() - 1;
}

Layout::Layout(const ModelConfig& c) {
  c.validate();
  using I = TensorSpec::Init;
  const int E = c.embed_dim, H = c.hidden_dim, V = c.vocab_size;
  src_embed = add("src_embed", Group::SrcEmbed, E, V, I::Xavier);
  tgt_embed = add("tgt_embed", Group::TgtEmbed, E, V, I::Xavier);
  for (int l = 0; l < c.enc_layers; ++l) {
    const int in = l == 0 ? E : 2 * H;
    std::array<std::size_t, 2> wx{}, wh{}, b{};
    for (int d = 0; d < 2; ++d) {
      const std::string p = "encoder.l" + std::to_string(l) + (d == 0 ? ".fwd" : ".bwd");
      wx[d] = add(p + ".wx", Group::Encoder, 4 * H, in, I::Xavier);
      wh[d] = add(p + ".wh", Group::Encoder, 4 * H, H, I::Xavier);
      b[d] = add(p + ".b", Group::Encoder, 4 * H, 1, I::LstmBias);
    }
    enc_wx.push_back(wx);
    enc_wh.push_back(wh);
    enc_b.push_back(b);
  }
  for (int l = 0; l < c.dec_layers; ++l) {
    const std::string p = "bridge.l" + std::to_string(l);
    bridge_hw.push_back(add(p + ".h.w", Group::Encoder, H, 2 * H, I::Xavier));
    bridge_hb.push_back(add(p + ".h.b", Group::Encoder, H, 1, I::Zero));
    bridge_cw.push_back(add(p + ".c.w", Group::Encoder, H, 2 * H, I::Xavier));
    bridge_cb.push_back(add(p + ".c.b", Group::Encoder, H, 1, I::Zero));
  }
  for (int l = 0; l < c.dec_layers; ++l) {
    const int in = l == 0 ? E + H : H;
    const std::string p = "decoder.l" + std::to_string(l);
    dec_wx.push_back(add(p + ".wx", Group::Decoder, 4 * H, in, I::Xavier));
    dec_wh.push_back(add(p + ".wh", Group::Decoder, 4 * H, H, I::Xavier));
    dec_b.push_back(add(p + ".b", Group::Decoder, 4 * H, 1, I::LstmBias));
  }
  att_wm = add("attention.wm", Group::Decoder, H, 2 * H, I::Xavier);
  att_wq = add("attention.wq", Group::Decoder, H, H, I::Xavier);
  att_b = add("attention.b", Group::Decoder, H, 1, I::Zero);
  att_v = add("attention.v", Group::Decoder, H, 1, I::Xavier);
  comb_w = add("combine.w", Group::Decoder, H, 3 * H, I::Xavier);
  comb_b = add("combine.b", Group::Decoder, H, 1, I::Zero);
  out_w = add("output.w", Group::Decoder, V, H, I::Xavier);
  out_b = add("output.b", Group::Decoder, V, 1, I::Zero);
}

std::size_t Layout::find(std::string_view name) const {
  for (std::size_t i = 0; i < specs_.size(); ++i)
    if (specs_[i].name == name) return i;
  throw ValidationError("no tensor named '" + std::string(name) + "'");
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros_like() const {
  ModelParams<T> z;
  z.config = config;
  z.layout = layout;
  z.tensors.reserve(tensors.size());
  for (const auto& t : tensors) z.tensors.push_back(Mat<T>::Zero(t.rows(), t.cols()));
  return z;
}

template <typename T>
bool ModelParams<T>::all_finite() const {
  return std::all_of(tensors.begin(), tensors.end(),
                     [](const Mat<T>& t) { return t.allFinite(); });
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams<T> p;
  p.config = config;
  p.layout = std::make_shared<const Layout>(config);
  std::mt19937_64 rng(seed);
  const int H = config.hidden_dim;
  for (const auto& s : p.layout->specs()) {
    Mat<T> m = Mat<T>::Zero(s.rows, s.cols);
    if (s.init == TensorSpec::Init::Xavier) {
      const double limit = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<T>(u(rng));
    } else if (s.init == TensorSpec::Init::LstmBias) {
      m.block(H, 0, H, 1).setOnes();
    }
    p.tensors.push_back(std::move(m));
  }
  return p;
}

namespace {

template <typename T>
Mat<T> keep_mask(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double p) {
  if (p <= 0.0) return Mat<T>::Ones(rows, cols);
  std::bernoulli_distribution keep(1.0 - p);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  Mat<T> m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = keep(rng) ? scale : T(0);
  return m;
}

template <typename T>
std::vector<Mat<T>> step_masks(std::mt19937_64& rng, Eigen::Index rows, int batch, int steps,
                               double p, bool shared) {
  std::vector<Mat<T>> out;
  out.reserve(static_cast<std::size_t>(steps));
  if (shared) {
    const Mat<T> m = keep_mask<T>(rng, rows, batch, p);
    out.assign(static_cast<std::size_t>(steps), m);
  } else {
    for (int t = 0; t < steps; ++t) out.push_back(keep_mask<T>(rng, rows, batch, p));
  }
  return out;
}

}  // namespace

template <typename T>
DropoutMasks<T> apply_dropout_masks(const ModelConfig& c, std::uint64_t seed, int batch,
                                    int src_len, int tgt_len) {
  if (!(c.dropout_p >= 0.0 && c.dropout_p < 1.0) ||
      !(c.word_dropout_p >= 0.0 && c.word_dropout_p < 1.0))
    throw ConfigError("dropout probabilities must lie in [0, 1)");
  std::mt19937_64 rng(seed);
  const int E = c.embed_dim, H = c.hidden_dim;
  const double p = c.dropout_p;
  // Without variational dropout the recurrent connections are left intact.
  const double rp = c.variational ? p : 0.0;
  DropoutMasks<T> m;
  m.batch = batch;
  m.src_len = src_len;
  m.tgt_len = tgt_len;
  m.word = keep_mask<T>(rng, src_len, batch, c.word_dropout_p);
  for (int l = 0; l < c.enc_layers; ++l) {
    m.enc_input.push_back(
        step_masks<T>(rng, l == 0 ? E : 2 * H, batch, src_len, p, c.variational));
    std::array<std::vector<Mat<T>>, 2> rec;
    for (int d = 0; d < 2; ++d) rec[d] = step_masks<T>(rng, H, batch, src_len, rp, true);
    m.enc_recurrent.push_back(std::move(rec));
  }
  for (int l = 0; l < c.dec_layers; ++l) {
    m.dec_input.push_back(
        step_masks<T>(rng, l == 0 ? E + H : H, batch, tgt_len, p, c.variational));
    m.dec_recurrent.push_back(step_masks<T>(rng, H, batch, tgt_len, rp, true));
  }
  m.output = step_masks<T>(rng, H, batch, tgt_len, p, false);
  return m;
}

int Batch::max_src_len() const {
  std::size_t n = 0;
  for (const auto& s : src) n = std::max(n, s.size());
  return static_cast<int>(n);
}

int Batch::max_tgt_steps() const {
  std::size_t n = 0;
  for (const auto& s : tgt) n = std::max(n, s.size());
  return static_cast<int>(n) + 1;
}

namespace {

template <typename T>
auto sigmoid(const Eigen::ArrayBase<T>& x) {
  using S = typename T::Scalar;
  return (S(1) + (-x).exp()).inverse();
}

// Gate activations in place: rows are (i, f, g, o) blocks of height H.
template <typename T>
void activate_gates(Mat<T>& z, int H) {
  z.topRows(2 * H) = sigmoid(z.topRows(2 * H).array()).matrix();
  z.middleRows(2 * H, H) = z.middleRows(2 * H, H).array().tanh().matrix();
  z.bottomRows(H) = sigmoid(z.bottomRows(H).array()).matrix();
}

// Recorded activations of one LSTM (one layer, one direction) over a padded
// sequence; column t * B + b.
template <typename T>
struct LstmTrace {
  Mat<T> x;       // masked input
  Mat<T> gates;   // activated gates
  Mat<T> c_prev;  // cell state entering the step
  Mat<T> c_new;   // cell state computed by the step (before carry)
  Mat<T> h_prev;  // recurrent input after the recurrent mask
  Mat<T> h_out;   // hidden state after the step (carried over padding)
};

// Backward through one step. `dh`/`dc` hold the gradient w.r.t. the step's
// output state and are replaced by the gradient w.r.t. its input state.
// Columns with valid == 0 are carried through unchanged.
template <typename T>
void lstm_step_backward(const Mat<T>& wh, const LstmTrace<T>& tr, const Mat<T>* rec_mask,
                        const std::vector<char>* valid, Eigen::Index col0, int B, int H,
                        Mat<T>& dh, Mat<T>& dc, Eigen::Ref<Mat<T>> dz) {
  const auto g = tr.gates.middleCols(col0, B).array();
  const auto i = g.topRows(H);
  const auto f = g.middleRows(H, H);
  const auto gg = g.middleRows(2 * H, H);
  const auto o = g.bottomRows(H);
  const Mat<T> tc = tr.c_new.middleCols(col0, B).array().tanh().matrix();
  const auto tca = tc.array();
  const Mat<T> dct = (dc.array() + dh.array() * o * (T(1) - tca * tca)).matrix();
  const auto dcta = dct.array();
  dz.topRows(H) = (dcta * gg * i * (T(1) - i)).matrix();
  dz.middleRows(H, H) =
      (dcta * tr.c_prev.middleCols(col0, B).array() * f * (T(1) - f)).matrix();
  dz.middleRows(2 * H, H) = (dcta * i * (T(1) - gg * gg)).matrix();
  dz.bottomRows(H) = (dh.array() * tca * o * (T(1) - o)).matrix();
  Mat<T> dc_prev = (dcta * f).matrix();
  Mat<T> dh_prev = wh.transpose() * dz;
  if (rec_mask) dh_prev.array() *= rec_mask->array();
  if (valid) {
    for (int b = 0; b < B; ++b) {
      if ((*valid)[static_cast<std::size_t>(col0 + b)]) continue;
      dz.col(b).setZero();
      dh_prev.col(b) = dh.col(b);
      dc_prev.col(b) = dc.col(b);
    }
  }
  dh = std::move(dh_prev);
  dc = std::move(dc_prev);
}

}  // namespace

template <typename T>
struct ForwardCache {
  const ModelParams<T>* params = nullptr;
  std::uint64_t version = 0;
  bool consumed = false;
  const DropoutMasks<T>* masks = nullptr;
  DropoutMasks<T> owned_masks;  // copy, so the caller's masks may go away
  bool has_masks = false;

  int B = 0, S = 0, Tn = 0;
  std::size_t tokens = 0;
  std::vector<int> src_ids, dec_in, dec_out;  // padded, column order
  std::vector<char> src_valid, tgt_valid;

  // Encoder: per layer, per direction.
  std::vector<std::array<LstmTrace<T>, 2>> enc;
  std::vector<Mat<T>> enc_in;  // per layer, unmasked input
  std::vector<std::array<Mat<T>, 4>> enc_final;  // per layer: hf, hb, cf, cb
  Mat<T> memory, keys;

  std::vector<Mat<T>> bridge_h_in, bridge_c_in;  // per decoder layer: [hf; hb], [cf; cb]
  std::vector<LstmTrace<T>> dec;
  std::vector<Mat<T>> attn_u;      // per step: tanh(keys + query), H x (S * B)
  std::vector<Mat<T>> attn_alpha;  // per step: S x B
  Mat<T> ctx_state;                // [context; decoder state], 3H x N
  Mat<T> htil, htil_drop;          // H x N
  Mat<T> probs;                    // V x N
};

namespace {

template <typename T>
const Mat<T>* mask_or_null(const std::vector<Mat<T>>* v, int t) {
  return v ? &(*v)[static_cast<std::size_t>(t)] : nullptr;
}

template <typename T>
void check_mask_shapes(const DropoutMasks<T>& m, const ModelConfig& c, int B, int S, int Tn) {
  bool ok = m.batch == B && m.src_len >= S && m.tgt_len >= Tn && m.word.rows() >= S &&
            m.word.cols() == B && static_cast<int>(m.enc_input.size()) == c.enc_layers &&
            static_cast<int>(m.dec_input.size()) == c.dec_layers &&
            static_cast<int>(m.output.size()) >= Tn;
  if (!ok) throw ValidationError("dropout masks do not fit the batch");
}

// One encoder layer in one direction.
template <typename T>
void run_encoder_direction(const ModelParams<T>& P, std::size_t wx, std::size_t wh,
                           std::size_t bias, const Mat<T>& x, int dir, int B, int S,
                           const std::vector<char>& valid, const std::vector<Mat<T>>* rec,
                           LstmTrace<T>& tr, Mat<T>& h, Mat<T>& c) {
  const int H = P.config.hidden_dim;
  const Eigen::Index N = static_cast<Eigen::Index>(S) * B;
  Mat<T> pre = P[wx] * x;
  pre.colwise() += P[bias].col(0);
  tr.gates.resize(4 * H, N);
  tr.c_prev.resize(H, N);
  tr.c_new.resize(H, N);
  tr.h_prev.resize(H, N);
  tr.h_out.resize(H, N);
  h = Mat<T>::Zero(H, B);
  c = Mat<T>::Zero(H, B);
  for (int s = 0; s < S; ++s) {
    const int t = dir == 0 ? s : S - 1 - s;
    const Eigen::Index col0 = static_cast<Eigen::Index>(t) * B;
    Mat<T> hr = h;
    if (rec) hr.array() *= (*rec)[static_cast<std::size_t>(t)].array();
    Mat<T> z = pre.middleCols(col0, B);
    z.noalias() += P[wh] * hr;
    activate_gates(z, H);
    const Mat<T> cn = (z.middleRows(H, H).array() * c.array() +
                       z.topRows(H).array() * z.middleRows(2 * H, H).array())
                          .matrix();
    const Mat<T> hn = (z.bottomRows(H).array() * cn.array().tanh()).matrix();
    tr.gates.middleCols(col0, B) = z;
    tr.c_prev.middleCols(col0, B) = c;
    tr.c_new.middleCols(col0, B) = cn;
    tr.h_prev.middleCols(col0, B) = hr;
    for (int b = 0; b < B; ++b) {
      if (!valid[static_cast<std::size_t>(col0 + b)]) continue;
      h.col(b) = hn.col(b);
      c.col(b) = cn.col(b);
    }
    tr.h_out.middleCols(col0, B) = h;
  }
}

template <typename T>
void log_softmax_columns(const Mat<T>& logits, Mat<T>& probs, Mat<T>* logp) {
  probs.resize(logits.rows(), logits.cols());
  if (logp) logp->resize(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const T mx = logits.col(j).maxCoeff();
    const auto shifted = (logits.col(j).array() - mx);
    const T lse = std::log(shifted.exp().sum());
    if (logp) logp->col(j) = (shifted - lse).matrix();
    probs.col(j) = (shifted - lse).exp().matrix();
  }
}

// Masked softmax over source positions; `scores` is 1 x (S * B), column t*B+b.
template <typename T>
Mat<T> attention_weights(const Mat<T>& scores, int B, int S, const std::vector<char>& valid) {
  Mat<T> alpha = Mat<T>::Zero(S, B);
  for (int b = 0; b < B; ++b) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int i = 0; i < S; ++i)
      if (valid[static_cast<std::size_t>(i * B + b)]) mx = std::max(mx, scores(0, i * B + b));
    if (!std::isfinite(mx)) continue;  // empty source: no context
    T sum = 0;
    for (int i = 0; i < S; ++i) {
      if (!valid[static_cast<std::size_t>(i * B + b)]) continue;
      alpha(i, b) = std::exp(scores(0, i * B + b) - mx);
      sum += alpha(i, b);
    }
    alpha.col(b) /= sum;
  }
  return alpha;
}

template <typename T>
Mat<T> attend(const Mat<T>& memory, const Mat<T>& alpha, int B, int S) {
  Mat<T> ctx = Mat<T>::Zero(memory.rows(), B);
  for (int i = 0; i < S; ++i)
    ctx.array() += memory.middleCols(static_cast<Eigen::Index>(i) * B, B).array().rowwise() *
                   alpha.row(i).array();
  return ctx;
}

}  // namespace

template <typename T>
ForwardResult<T> forward_loss(const ModelParams<T>& P, const Batch& batch,
                              const DropoutMasks<T>* masks) {
  const ModelConfig& cfg = P.config;
  const Layout& L = *P.layout;
  const int B = static_cast<int>(batch.src.size());
  if (B == 0 || batch.tgt.size() != batch.src.size())
    throw ValidationError("batch must hold equally many (>= 1) sources and targets");
  const int S = std::max(1, batch.max_src_len());
  const int Tn = batch.max_tgt_steps();
  const int E = cfg.embed_dim, H = cfg.hidden_dim, V = cfg.vocab_size;
  const Eigen::Index NS = static_cast<Eigen::Index>(S) * B;
  const Eigen::Index NT = static_cast<Eigen::Index>(Tn) * B;

  auto cache = std::make_shared<ForwardCache<T>>();
  ForwardCache<T>& C = *cache;
  C.params = &P;
  C.version = P.version;
  C.B = B;
  C.S = S;
  C.Tn = Tn;
  if (masks) {
    check_mask_shapes(*masks, cfg, B, S, Tn);
    C.owned_masks = *masks;
    C.masks = &C.owned_masks;
    C.has_masks = true;
  }
  const DropoutMasks<T>* M = C.masks;

  const auto check_id = [&](int id) {
    if (id < 0 || id >= V)
      throw ValidationError("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(V));
  };
  C.src_ids.assign(static_cast<std::size_t>(NS), BpeModel::kPad);
  C.src_valid.assign(static_cast<std::size_t>(NS), 0);
  C.dec_in.assign(static_cast<std::size_t>(NT), BpeModel::kPad);
  C.dec_out.assign(static_cast<std::size_t>(NT), BpeModel::kPad);
  C.tgt_valid.assign(static_cast<std::size_t>(NT), 0);
  for (int b = 0; b < B; ++b) {
    const auto& s = batch.src[static_cast<std::size_t>(b)];
    for (std::size_t t = 0; t < s.size(); ++t) {
      check_id(s[t]);
      C.src_ids[t * B + b] = s[t];
      C.src_valid[t * B + b] = 1;
    }
    const auto& y = batch.tgt[static_cast<std::size_t>(b)];
    for (std::size_t t = 0; t <= y.size(); ++t) {
      if (t < y.size()) check_id(y[t]);
      C.dec_in[t * B + b] = t == 0 ? BpeModel::kBos : y[t - 1];
      C.dec_out[t * B + b] = t < y.size() ? y[t] : BpeModel::kEos;
      C.tgt_valid[t * B + b] = 1;
      ++C.tokens;
    }
  }

  // Encoder.
  Mat<T> layer_in(E, NS);
  for (Eigen::Index k = 0; k < NS; ++k) {
    layer_in.col(k) = P[L.src_embed].col(C.src_ids[static_cast<std::size_t>(k)]);
    if (M) layer_in.col(k) *= M->word(k / B, k % B);
  }
  C.enc.resize(static_cast<std::size_t>(cfg.enc_layers));
  C.enc_final.resize(static_cast<std::size_t>(cfg.enc_layers));
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    Mat<T> x = layer_in;
    if (M)
      for (int t = 0; t < S; ++t)
        x.middleCols(static_cast<Eigen::Index>(t) * B, B).array() *=
            M->enc_input[ul][static_cast<std::size_t>(t)].array();
    C.enc_in.push_back(std::move(layer_in));
    Mat<T> out(2 * H, NS);
    for (int d = 0; d < 2; ++d) {
      auto& tr = C.enc[ul][static_cast<std::size_t>(d)];
      tr.x = x;
      Mat<T> h, c;
      run_encoder_direction(P, L.enc_wx[ul][d], L.enc_wh[ul][d], L.enc_b[ul][d], tr.x, d, B, S,
                            C.src_valid, M ? &M->enc_recurrent[ul][d] : nullptr, tr, h, c);
      out.middleRows(d * H, H) = tr.h_out;
      C.enc_final[ul][static_cast<std::size_t>(d)] = h;
      C.enc_final[ul][static_cast<std::size_t>(2 + d)] = c;
    }
    layer_in = std::move(out);
  }
  C.memory = std::move(layer_in);
  C.keys = P[L.att_wm] * C.memory;
  C.keys.colwise() += P[L.att_b].col(0);

  // Decoder initial states through the bridge.
  std::vector<Mat<T>> h(static_cast<std::size_t>(cfg.dec_layers)), c(h.size());
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    const auto& fin = C.enc_final[static_cast<std::size_t>(std::min(l, cfg.enc_layers - 1))];
    Mat<T> hin(2 * H, B), cin(2 * H, B);
    hin << fin[0], fin[1];
    cin << fin[2], fin[3];
    h[ul] = P[L.bridge_hw[ul]] * hin;
    h[ul].colwise() += P[L.bridge_hb[ul]].col(0);
    c[ul] = P[L.bridge_cw[ul]] * cin;
    c[ul].colwise() += P[L.bridge_cb[ul]].col(0);
    C.bridge_h_in.push_back(std::move(hin));
    C.bridge_c_in.push_back(std::move(cin));
  }

  // Decoder.
  C.dec.resize(static_cast<std::size_t>(cfg.dec_layers));
  for (int l = 0; l < cfg.dec_layers; ++l) {
    auto& tr = C.dec[static_cast<std::size_t>(l)];
    tr.x.resize(l == 0 ? E + H : H, NT);
    tr.gates.resize(4 * H, NT);
    tr.c_prev.resize(H, NT);
    tr.c_new.resize(H, NT);
    tr.h_prev.resize(H, NT);
    tr.h_out.resize(H, NT);
  }
  auto& tr0 = C.dec[0];
  for (Eigen::Index k = 0; k < NT; ++k)
    tr0.x.col(k).head(E) = P[L.tgt_embed].col(C.dec_in[static_cast<std::size_t>(k)]);
  if (M)
    for (int t = 0; t < Tn; ++t)
      tr0.x.block(0, static_cast<Eigen::Index>(t) * B, E, B).array() *=
          M->dec_input[0][static_cast<std::size_t>(t)].topRows(E).array();
  Mat<T> pre0 = P[L.dec_wx[0]].leftCols(E) * tr0.x.topRows(E);
  pre0.colwise() += P[L.dec_b[0]].col(0);

  C.ctx_state.resize(3 * H, NT);
  C.htil.resize(H, NT);
  C.htil_drop.resize(H, NT);
  C.attn_u.resize(static_cast<std::size_t>(Tn));
  C.attn_alpha.resize(static_cast<std::size_t>(Tn));
  Mat<T> feed = Mat<T>::Zero(H, B);
  for (int t = 0; t < Tn; ++t) {
    const Eigen::Index col0 = static_cast<Eigen::Index>(t) * B;
    const auto ut = static_cast<std::size_t>(t);
    for (int l = 0; l < cfg.dec_layers; ++l) {
      const auto ul = static_cast<std::size_t>(l);
      auto& tr = C.dec[ul];
      Mat<T> z;
      if (l == 0) {
        Mat<T> xf = feed;
        if (M) xf.array() *= M->dec_input[0][ut].bottomRows(H).array();
        tr.x.block(E, col0, H, B) = xf;
        z = pre0.middleCols(col0, B);
        z.noalias() += P[L.dec_wx[0]].rightCols(H) * xf;
      } else {
        Mat<T> x = h[ul - 1];
        if (M) x.array() *= M->dec_input[ul][ut].array();
        tr.x.middleCols(col0, B) = x;
        z = P[L.dec_wx[ul]] * x;
        z.colwise() += P[L.dec_b[ul]].col(0);
      }
      Mat<T> hr = h[ul];
      if (M) hr.array() *= M->dec_recurrent[ul][ut].array();
      z.noalias() += P[L.dec_wh[ul]] * hr;
      activate_gates(z, H);
      Mat<T> cn = (z.middleRows(H, H).array() * c[ul].array() +
                   z.topRows(H).array() * z.middleRows(2 * H, H).array())
                      .matrix();
      Mat<T> hn = (z.bottomRows(H).array() * cn.array().tanh()).matrix();
      tr.gates.middleCols(col0, B) = z;
      tr.c_prev.middleCols(col0, B) = c[ul];
      tr.c_new.middleCols(col0, B) = cn;
      tr.h_prev.middleCols(col0, B) = hr;
      tr.h_out.middleCols(col0, B) = hn;
      h[ul] = std::move(hn);
      c[ul] = std::move(cn);
    }
    const Mat<T>& s = h.back();
    Mat<T> q = P[L.att_wq] * s;
    Mat<T> u = C.keys;
    for (int i = 0; i < S; ++i) u.middleCols(static_cast<Eigen::Index>(i) * B, B) += q;
    u = u.array().tanh().matrix();
    const Mat<T> scores = P[L.att_v].transpose() * u;
    C.attn_alpha[ut] = attention_weights(scores, B, S, C.src_valid);
    C.attn_u[ut] = std::move(u);
    C.ctx_state.block(0, col0, 2 * H, B) = attend(C.memory, C.attn_alpha[ut], B, S);
    C.ctx_state.block(2 * H, col0, H, B) = s;
    Mat<T> a = P[L.comb_w] * C.ctx_state.middleCols(col0, B);
    a.colwise() += P[L.comb_b].col(0);
    C.htil.middleCols(col0, B) = a.array().tanh().matrix();
    feed = C.htil.middleCols(col0, B);
    if (M) feed.array() *= M->output[ut].array();
    C.htil_drop.middleCols(col0, B) = feed;
  }

  Mat<T> logits = P[L.out_w] * C.htil_drop;
  logits.colwise() += P[L.out_b].col(0);
  Mat<T> logp;
  log_softmax_columns(logits, C.probs, &logp);
  double nll = 0.0;
  for (Eigen::Index k = 0; k < NT; ++k)
    if (C.tgt_valid[static_cast<std::size_t>(k)])
      nll -= static_cast<double>(logp(C.dec_out[static_cast<std::size_t>(k)], k));
  ForwardResult<T> r;
  r.tokens = C.tokens;
  r.loss = static_cast<T>(nll / static_cast<double>(C.tokens));
  r.cache = std::move(cache);
  return r;
}

template <typename T>
ModelParams<T> backward(ForwardCache<T>& C, std::span<const Group> need) {
  if (C.consumed) throw ValidationError("forward cache already consumed by a backward pass");
  if (!C.params || C.params->version != C.version)
    throw ValidationError("stale forward cache: parameters changed since the forward pass");
  C.consumed = true;
  const ModelParams<T>& P = *C.params;
  const ModelConfig& cfg = P.config;
  const Layout& L = *P.layout;
  const DropoutMasks<T>* M = C.masks;
  const auto wants = [&](Group g) { return std::find(need.begin(), need.end(), g) != need.end(); };
  const bool g_src = wants(Group::SrcEmbed), g_tgt = wants(Group::TgtEmbed);
  const bool g_enc = wants(Group::Encoder), g_dec = wants(Group::Decoder);
  const int B = C.B, S = C.S, Tn = C.Tn;
  const int E = cfg.embed_dim, H = cfg.hidden_dim;
  const Eigen::Index NS = static_cast<Eigen::Index>(S) * B;
  const Eigen::Index NT = static_cast<Eigen::Index>(Tn) * B;
  ModelParams<T> G = P.zeros_like();

  // Output layer.
  Mat<T> dlogits = C.probs;
  const T inv_tokens = T(1) / static_cast<T>(C.tokens);
  for (Eigen::Index k = 0; k < NT; ++k) {
    if (!C.tgt_valid[static_cast<std::size_t>(k)]) {
      dlogits.col(k).setZero();
      continue;
    }
    dlogits(C.dec_out[static_cast<std::size_t>(k)], k) -= T(1);
    dlogits.col(k) *= inv_tokens;
  }
  if (g_dec) {
    G[L.out_w].noalias() = dlogits * C.htil_drop.transpose();
    G[L.out_b] = dlogits.rowwise().sum();
  }
  const Mat<T> dhtil_out = P[L.out_w].transpose() * dlogits;

  // Decoder, reverse time.
  const int DL = cfg.dec_layers;
  std::vector<Mat<T>> dh(static_cast<std::size_t>(DL), Mat<T>::Zero(H, B)), dc(dh);
  std::vector<Mat<T>> dz_all(static_cast<std::size_t>(DL));
  for (auto& m : dz_all) m.resize(4 * H, NT);
  Mat<T> da_all(H, NT);
  Mat<T> dkeys = Mat<T>::Zero(H, NS);
  Mat<T> dmemory = Mat<T>::Zero(2 * H, NS);
  Mat<T> demb_tgt(E, NT);
  Mat<T> dfeed = Mat<T>::Zero(H, B);
  const Mat<T>& v = P[L.att_v];
  for (int t = Tn - 1; t >= 0; --t) {
    const Eigen::Index col0 = static_cast<Eigen::Index>(t) * B;
    const auto ut = static_cast<std::size_t>(t);
    Mat<T> dht = dhtil_out.middleCols(col0, B) + dfeed;
    if (M) dht.array() *= M->output[ut].array();
    const auto ht = C.htil.middleCols(col0, B).array();
    const Mat<T> da = (dht.array() * (T(1) - ht * ht)).matrix();
    da_all.middleCols(col0, B) = da;
    const Mat<T> dcat = P[L.comb_w].transpose() * da;
    const Mat<T> dctx = dcat.topRows(2 * H);
    Mat<T> ds = dcat.bottomRows(H);

    const Mat<T>& alpha = C.attn_alpha[ut];
    Mat<T> dalpha(S, B);
    for (int i = 0; i < S; ++i) {
      const Eigen::Index ci = static_cast<Eigen::Index>(i) * B;
      dalpha.row(i) = (C.memory.middleCols(ci, B).array() * dctx.array()).colwise().sum();
      dmemory.middleCols(ci, B).array() += dctx.array().rowwise() * alpha.row(i).array();
    }
    const Mat<T> de =
        (alpha.array() *
         (dalpha.array().rowwise() - (alpha.array() * dalpha.array()).colwise().sum()))
            .matrix();
    const Mat<T>& u = C.attn_u[ut];
    Mat<T> de_flat(1, NS);
    for (int i = 0; i < S; ++i) de_flat.middleCols(static_cast<Eigen::Index>(i) * B, B) = de.row(i);
    if (g_dec) G[L.att_v].noalias() += u * de_flat.transpose();
    const Mat<T> dpre = ((v * de_flat).array() * (T(1) - u.array() * u.array())).matrix();
    dkeys += dpre;
    Mat<T> dq = Mat<T>::Zero(H, B);
    for (int i = 0; i < S; ++i) dq += dpre.middleCols(static_cast<Eigen::Index>(i) * B, B);
    const auto s_t = C.ctx_state.block(2 * H, col0, H, B);
    if (g_dec) G[L.att_wq].noalias() += dq * s_t.transpose();
    ds.noalias() += P[L.att_wq].transpose() * dq;
    dh.back() += ds;

    for (int l = DL - 1; l >= 0; --l) {
      const auto ul = static_cast<std::size_t>(l);
      auto dz = dz_all[ul].middleCols(col0, B);
      lstm_step_backward<T>(P[L.dec_wh[ul]], C.dec[ul], M ? &M->dec_recurrent[ul][ut] : nullptr,
                            nullptr, col0, B, H, dh[ul], dc[ul], dz);
      Mat<T> dx = P[L.dec_wx[ul]].transpose() * dz;
      if (M) dx.array() *= M->dec_input[ul][ut].array();
      if (l > 0) {
        dh[ul - 1] += dx;
      } else {
        demb_tgt.middleCols(col0, B) = dx.topRows(E);
        dfeed = dx.bottomRows(H);
      }
    }
  }
  if (g_dec) {
    G[L.comb_w].noalias() = da_all * C.ctx_state.transpose();
    G[L.comb_b] = da_all.rowwise().sum();
    for (int l = 0; l < DL; ++l) {
      const auto ul = static_cast<std::size_t>(l);
      G[L.dec_wx[ul]].noalias() = dz_all[ul] * C.dec[ul].x.transpose();
      G[L.dec_wh[ul]].noalias() = dz_all[ul] * C.dec[ul].h_prev.transpose();
      G[L.dec_b[ul]] = dz_all[ul].rowwise().sum();
    }
    G[L.att_wm].noalias() = dkeys * C.memory.transpose();
    G[L.att_b] = dkeys.rowwise().sum();
  }
  if (g_tgt)
    for (Eigen::Index k = 0; k < NT; ++k)
      G[L.tgt_embed].col(C.dec_in[static_cast<std::size_t>(k)]) += demb_tgt.col(k);
  if (!g_src && !g_enc) return G;

  dmemory.noalias() += P[L.att_wm].transpose() * dkeys;

  // Bridge.
  std::vector<std::array<Mat<T>, 4>> dfinal(static_cast<std::size_t>(cfg.enc_layers));
  for (auto& a : dfinal)
    for (auto& m : a) m = Mat<T>::Zero(H, B);
  for (int l = 0; l < DL; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    if (g_enc) {
      G[L.bridge_hw[ul]].noalias() = dh[ul] * C.bridge_h_in[ul].transpose();
      G[L.bridge_hb[ul]] = dh[ul].rowwise().sum();
      G[L.bridge_cw[ul]].noalias() = dc[ul] * C.bridge_c_in[ul].transpose();
      G[L.bridge_cb[ul]] = dc[ul].rowwise().sum();
    }
    const Mat<T> dhin = P[L.bridge_hw[ul]].transpose() * dh[ul];
    const Mat<T> dcin = P[L.bridge_cw[ul]].transpose() * dc[ul];
    auto& df = dfinal[static_cast<std::size_t>(std::min(l, cfg.enc_layers - 1))];
    df[0] += dhin.topRows(H);
    df[1] += dhin.bottomRows(H);
    df[2] += dcin.topRows(H);
    df[3] += dcin.bottomRows(H);
  }

  // Encoder, top layer first.
  Mat<T> dout = std::move(dmemory);
  for (int l = cfg.enc_layers - 1; l >= 0; --l) {
    const auto ul = static_cast<std::size_t>(l);
    Mat<T> dx = Mat<T>::Zero(C.enc[ul][0].x.rows(), NS);
    for (int d = 0; d < 2; ++d) {
      const auto& tr = C.enc[ul][static_cast<std::size_t>(d)];
      Mat<T> dhc = dfinal[ul][static_cast<std::size_t>(d)];
      Mat<T> dcc = dfinal[ul][static_cast<std::size_t>(2 + d)];
      Mat<T> dz_all_e(4 * H, NS);
      for (int s = S - 1; s >= 0; --s) {
        const int t = d == 0 ? s : S - 1 - s;
        const Eigen::Index col0 = static_cast<Eigen::Index>(t) * B;
        dhc += dout.block(d * H, col0, H, B);
        auto dz = dz_all_e.middleCols(col0, B);
        lstm_step_backward<T>(P[L.enc_wh[ul][d]], tr,
                              M ? &M->enc_recurrent[ul][d][static_cast<std::size_t>(t)] : nullptr,
                              &C.src_valid, col0, B, H, dhc, dcc, dz);
      }
      if (g_enc) {
        G[L.enc_wx[ul][d]].noalias() = dz_all_e * tr.x.transpose();
        G[L.enc_wh[ul][d]].noalias() = dz_all_e * tr.h_prev.transpose();
        G[L.enc_b[ul][d]] = dz_all_e.rowwise().sum();
      }
      dx.noalias() += P[L.enc_wx[ul][d]].transpose() * dz_all_e;
    }
    if (M)
      for (int t = 0; t < S; ++t)
        dx.middleCols(static_cast<Eigen::Index>(t) * B, B).array() *=
            M->enc_input[ul][static_cast<std::size_t>(t)].array();
    dout = std::move(dx);
  }
  if (g_src) {
    for (Eigen::Index k = 0; k < NS; ++k) {
      if (!C.src_valid[static_cast<std::size_t>(k)]) continue;
      const T w = M ? M->word(k / B, k % B) : T(1);
      G[L.src_embed].col(C.src_ids[static_cast<std::size_t>(k)]) += w * dout.col(k);
    }
  }
  return G;
}

// Inference ------------------------------------------------------------------

namespace {

// Encoder output for inference, column t * B + b.
template <typename T>
struct Encoded {
  int B = 0, S = 0;
  Mat<T> memory, keys;
  std::vector<char> valid;
  std::vector<Mat<T>> h, c;  // decoder initial states per layer
};

template <typename T>
Encoded<T> encode_batch(const ModelParams<T>& P, const std::vector<std::vector<int>>& srcs) {
  const ModelConfig& cfg = P.config;
  const Layout& L = *P.layout;
  Encoded<T> e;
  e.B = static_cast<int>(srcs.size());
  std::size_t smax = 1;
  for (const auto& s : srcs) smax = std::max(smax, s.size());
  e.S = static_cast<int>(smax);
  const int B = e.B, S = e.S, H = cfg.hidden_dim;
  const Eigen::Index NS = static_cast<Eigen::Index>(S) * B;
  e.valid.assign(static_cast<std::size_t>(NS), 0);
  Mat<T> x = Mat<T>::Zero(cfg.embed_dim, NS);
  for (int b = 0; b < B; ++b) {
    const auto& s = srcs[static_cast<std::size_t>(b)];
    for (std::size_t t = 0; t < s.size(); ++t) {
      if (s[t] < 0 || s[t] >= cfg.vocab_size)
        throw ValidationError("token id " + std::to_string(s[t]) + " outside vocabulary");
      x.col(static_cast<Eigen::Index>(t) * B + b) = P[L.src_embed].col(s[t]);
      e.valid[t * B + b] = 1;
    }
  }
  std::vector<std::array<Mat<T>, 4>> fin(static_cast<std::size_t>(cfg.enc_layers));
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    Mat<T> out(2 * H, NS);
    for (int d = 0; d < 2; ++d) {
      LstmTrace<T> tr;
      Mat<T> h, c;
      run_encoder_direction<T>(P, L.enc_wx[ul][d], L.enc_wh[ul][d], L.enc_b[ul][d], x, d, B, S,
                               e.valid, nullptr, tr, h, c);
      out.middleRows(d * H, H) = tr.h_out;
      fin[ul][static_cast<std::size_t>(d)] = std::move(h);
      fin[ul][static_cast<std::size_t>(2 + d)] = std::move(c);
    }
    x = std::move(out);
  }
  e.memory = std::move(x);
  e.keys = P[L.att_wm] * e.memory;
  e.keys.colwise() += P[L.att_b].col(0);
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    const auto& f = fin[static_cast<std::size_t>(std::min(l, cfg.enc_layers - 1))];
    Mat<T> hin(2 * H, B), cin(2 * H, B);
    hin << f[0], f[1];
    cin << f[2], f[3];
    Mat<T> h0 = P[L.bridge_hw[ul]] * hin;
    h0.colwise() += P[L.bridge_hb[ul]].col(0);
    Mat<T> c0 = P[L.bridge_cw[ul]] * cin;
    c0.colwise() += P[L.bridge_cb[ul]].col(0);
    e.h.push_back(std::move(h0));
    e.c.push_back(std::move(c0));
  }
  return e;
}

// Decoder state of `B` parallel hypotheses; `origin[b]` is the encoded source
// column each hypothesis attends to.
template <typename T>
struct DecoderState {
  std::vector<Mat<T>> h, c;
  Mat<T> feed;
};

// Gathers source-major memory columns for hypotheses drawn from `origin`.
template <typename T>
Mat<T> gather_columns(const Mat<T>& m, int B, int S, const std::vector<int>& origin) {
  const int K = static_cast<int>(origin.size());
  Mat<T> out(m.rows(), static_cast<Eigen::Index>(S) * K);
  for (int i = 0; i < S; ++i)
    for (int k = 0; k < K; ++k)
      out.col(static_cast<Eigen::Index>(i) * K + k) =
          m.col(static_cast<Eigen::Index>(i) * B + origin[static_cast<std::size_t>(k)]);
  return out;
}

template <typename T>
std::vector<char> gather_valid(const std::vector<char>& v, int B, int S,
                               const std::vector<int>& origin) {
  const int K = static_cast<int>(origin.size());
  std::vector<char> out(static_cast<std::size_t>(S) * K);
  for (int i = 0; i < S; ++i)
    for (int k = 0; k < K; ++k)
      out[static_cast<std::size_t>(i * K + k)] =
          v[static_cast<std::size_t>(i * B + origin[static_cast<std::size_t>(k)])];
  return out;
}

// One decoder step for K hypotheses over memory already laid out for K
// columns. Returns log-probabilities, V x K.
template <typename T>
Mat<T> decoder_step(const ModelParams<T>& P, const Mat<T>& memory, const Mat<T>& keys,
                    const std::vector<char>& valid, int S, const std::vector<int>& prev,
                    DecoderState<T>& st) {
  const ModelConfig& cfg = P.config;
  const Layout& L = *P.layout;
  const int K = static_cast<int>(prev.size());
  const int E = cfg.embed_dim, H = cfg.hidden_dim;
  Mat<T> emb(E, K);
  for (int k = 0; k < K; ++k) emb.col(k) = P[L.tgt_embed].col(prev[static_cast<std::size_t>(k)]);
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    Mat<T> z;
    if (l == 0) {
      z = P[L.dec_wx[0]].leftCols(E) * emb;
      z.noalias() += P[L.dec_wx[0]].rightCols(H) * st.feed;
    } else {
      z = P[L.dec_wx[ul]] * st.h[ul - 1];
    }
    z.colwise() += P[L.dec_b[ul]].col(0);
    z.noalias() += P[L.dec_wh[ul]] * st.h[ul];
    activate_gates(z, H);
    st.c[ul] = (z.middleRows(H, H).array() * st.c[ul].array() +
                z.topRows(H).array() * z.middleRows(2 * H, H).array())
                   .matrix();
    st.h[ul] = (z.bottomRows(H).array() * st.c[ul].array().tanh()).matrix();
  }
  const Mat<T>& s = st.h.back();
  const Mat<T> q = P[L.att_wq] * s;
  Mat<T> u = keys;
  for (int i = 0; i < S; ++i) u.middleCols(static_cast<Eigen::Index>(i) * K, K) += q;
  u = u.array().tanh().matrix();
  const Mat<T> scores = P[L.att_v].transpose() * u;
  const Mat<T> alpha = attention_weights(scores, K, S, valid);
  Mat<T> cat(3 * H, K);
  cat << attend(memory, alpha, K, S), s;
  Mat<T> a = P[L.comb_w] * cat;
  a.colwise() += P[L.comb_b].col(0);
  st.feed = a.array().tanh().matrix();
  Mat<T> logits = P[L.out_w] * st.feed;
  logits.colwise() += P[L.out_b].col(0);
  Mat<T> probs, logp;
  log_softmax_columns(logits, probs, &logp);
  return logp;
}

// Best token other than PAD and BOS; ties go to the lower id.
template <typename T>
int best_token(const Mat<T>& logp, int k) {
  int best = BpeModel::kEos;
  for (int w = 0; w < logp.rows(); ++w) {
    if (w == BpeModel::kPad || w == BpeModel::kBos) continue;
    if (logp(w, k) > logp(best, k)) best = w;
  }
  return best;
}

template <typename T>
std::vector<BeamHypothesis> greedy_batch_scored(const ModelParams<T>& P,
                                                const std::vector<std::vector<int>>& srcs,
                                                int max_len) {
  const int B = static_cast<int>(srcs.size());
  std::vector<BeamHypothesis> out(static_cast<std::size_t>(B));
  if (B == 0) return out;
  const Encoded<T> enc = encode_batch(P, srcs);
  DecoderState<T> st{enc.h, enc.c, Mat<T>::Zero(P.config.hidden_dim, B)};
  std::vector<int> prev(static_cast<std::size_t>(B), BpeModel::kBos);
  std::vector<char> done(static_cast<std::size_t>(B), 0);
  std::vector<int> steps(static_cast<std::size_t>(B), 0);
  for (int t = 0; t < max_len; ++t) {
    const Mat<T> logp = decoder_step(P, enc.memory, enc.keys, enc.valid, enc.S, prev, st);
    bool all_done = true;
    for (int b = 0; b < B; ++b) {
      const auto ub = static_cast<std::size_t>(b);
      if (done[ub]) continue;
      const int w = best_token(logp, b);
      out[ub].log_prob += static_cast<double>(logp(w, b));
      ++steps[ub];
      if (w == BpeModel::kEos) {
        done[ub] = 1;
        continue;
      }
      out[ub].tokens.push_back(w);
      prev[ub] = w;
      all_done = false;
    }
    if (all_done) break;
  }
  for (int b = 0; b < B; ++b) {
    const auto ub = static_cast<std::size_t>(b);
    out[ub].score = out[ub].log_prob / std::max(1, steps[ub]);
  }
  return out;
}

}  // namespace

template <typename T>
double sequence_log_prob(const ModelParams<T>& params, const std::vector<int>& src,
                         const std::vector<int>& tgt) {
  Batch b{{src}, {tgt}};
  const auto r = forward_loss<T>(params, b, nullptr);
  return -static_cast<double>(r.loss) * static_cast<double>(r.tokens);
}

template <typename T>
std::vector<std::vector<int>> decode_greedy_batch(const ModelParams<T>& params,
                                                  const std::vector<std::vector<int>>& srcs,
                                                  int max_len) {
  std::vector<std::vector<int>> out;
  for (auto& h : greedy_batch_scored(params, srcs, max_len)) out.push_back(std::move(h.tokens));
  return out;
}

template <typename T>
std::vector<int> decode_greedy(const ModelParams<T>& params, const std::vector<int>& src,
                               int max_len) {
  return std::move(greedy_batch_scored(params, {src}, max_len).front().tokens);
}

template <typename T>
BeamHypothesis decode_beam_scored(const ModelParams<T>& P, const std::vector<int>& src, int beam,
                                  int max_len) {
  if (beam < 1) throw ValidationError("beam size must be >= 1");
  const BeamHypothesis greedy = greedy_batch_scored(P, {src}, max_len).front();
  if (beam == 1) return greedy;

  const Encoded<T> enc = encode_batch(P, {src});
  const int H = P.config.hidden_dim;
  struct Live {
    std::vector<int> tokens;
    double log_prob;
    std::vector<Mat<T>> h, c;
    Mat<T> feed;
  };
  std::vector<Live> live{{{}, 0.0, enc.h, enc.c, Mat<T>::Zero(H, 1)}};
  std::vector<BeamHypothesis> finished;
  for (int t = 0; t < max_len && !live.empty(); ++t) {
    const int K = static_cast<int>(live.size());
    const std::vector<int> origin(static_cast<std::size_t>(K), 0);
    const Mat<T> memory = gather_columns(enc.memory, 1, enc.S, origin);
    const Mat<T> keys = gather_columns(enc.keys, 1, enc.S, origin);
    const auto valid = gather_valid<T>(enc.valid, 1, enc.S, origin);
    DecoderState<T> st;
    st.feed.resize(H, K);
    std::vector<int> prev;
    for (std::size_t l = 0; l < enc.h.size(); ++l) {
      st.h.emplace_back(H, K);
      st.c.emplace_back(H, K);
      for (int k = 0; k < K; ++k) {
        st.h[l].col(k) = live[static_cast<std::size_t>(k)].h[l];
        st.c[l].col(k) = live[static_cast<std::size_t>(k)].c[l];
      }
    }
    for (int k = 0; k < K; ++k) {
      const auto& hyp = live[static_cast<std::size_t>(k)];
      st.feed.col(k) = hyp.feed;
      prev.push_back(hyp.tokens.empty() ? BpeModel::kBos : hyp.tokens.back());
    }
    const Mat<T> logp = decoder_step(P, memory, keys, valid, enc.S, prev, st);

    struct Cand {
      double score;
      int k, w;
    };
    std::vector<Cand> cands;
    for (int k = 0; k < K; ++k)
      for (int w = 0; w < logp.rows(); ++w)
        if (w != BpeModel::kPad && w != BpeModel::kBos)
          cands.push_back({live[static_cast<std::size_t>(k)].log_prob + logp(w, k), k, w});
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(beam), cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep),
                      cands.end(), [](const Cand& a, const Cand& b) {
                        if (a.score != b.score) return a.score > b.score;
                        return a.k != b.k ? a.k < b.k : a.w < b.w;
                      });
    std::vector<Live> next;
    for (std::size_t n = 0; n < keep; ++n) {
      const Cand& cd = cands[n];
      const Live& parent = live[static_cast<std::size_t>(cd.k)];
      if (cd.w == BpeModel::kEos) {
        const double steps = static_cast<double>(parent.tokens.size() + 1);
        finished.push_back({parent.tokens, cd.score, cd.score / steps});
        continue;
      }
      Live child{parent.tokens, cd.score, {}, {}, st.feed.col(cd.k)};
      child.tokens.push_back(cd.w);
      for (std::size_t l = 0; l < st.h.size(); ++l) {
        child.h.push_back(st.h[l].col(cd.k));
        child.c.push_back(st.c[l].col(cd.k));
      }
      next.push_back(std::move(child));
    }
    live = std::move(next);
  }
  for (const auto& hyp : live)
    finished.push_back({hyp.tokens, hyp.log_prob,
                        hyp.log_prob / static_cast<double>(std::max<std::size_t>(1, hyp.tokens.size()))});
  BeamHypothesis best = greedy;
  for (const auto& f : finished)
    if (f.score > best.score) best = f;
  return best;
}

template <typename T>
std::vector<int> decode_beam(const ModelParams<T>& params, const std::vector<int>& src, int beam,
                             int max_len) {
  return decode_beam_scored(params, src, beam, max_len).tokens;
}

// Checkpoints -------------------------------------------------------------------

namespace {

constexpr const char* kMagic = "GECADAPT-CHECKPOINT 1";

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"embed_dim", c.embed_dim},         {"hidden_dim", c.hidden_dim},
          {"enc_layers", c.enc_layers},       {"dec_layers", c.dec_layers},
          {"vocab_size", c.vocab_size},       {"dropout_p", c.dropout_p},
          {"word_dropout_p", c.word_dropout_p}, {"variational", c.variational},
          {"max_decode_len", c.max_decode_len}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.embed_dim = j.at("embed_dim");
  c.hidden_dim = j.at("hidden_dim");
  c.enc_layers = j.at("enc_layers");
  c.dec_layers = j.at("dec_layers");
  c.vocab_size = j.at("vocab_size");
  c.dropout_p = j.at("dropout_p");
  c.word_dropout_p = j.at("word_dropout_p");
  c.variational = j.at("variational");
  c.max_decode_len = j.at("max_decode_len");
  return c;
}

}  // namespace

template <typename T>
void save_checkpoint(const ModelParams<T>& p, std::ostream& out) {
  std::string payload;
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    const auto& m = p.tensors[i];
    tensors.push_back({{"name", p.name(i)}, {"rows", m.rows()}, {"cols", m.cols()}});
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      const double d = static_cast<double>(m.data()[k]);
      payload.append(reinterpret_cast<const char*>(&d), sizeof d);
    }
  }
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
                         static_cast<uInt>(payload.size()));
  nlohmann::json header = {{"config", config_to_json(p.config)},
                           {"tensors", tensors},
                           {"dtype", "float64"},
                           {"payload_bytes", payload.size()},
                           {"crc32", crc}};
  out << kMagic << '\n' << header.dump() << '\n';
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error("failed writing checkpoint");
}

template <typename T>
ModelParams<T> load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw ParseError("not a checkpoint file", 1);
  if (!std::getline(in, line)) throw ParseError("missing checkpoint header", 2);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad checkpoint header: ") + e.what(), 2);
  }
  const std::size_t bytes = header.at("payload_bytes");
  std::string payload(bytes, '\0');
  in.read(payload.data(), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) throw ParseError("truncated checkpoint", 0);
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
                         static_cast<uInt>(payload.size()));
  if (crc != header.at("crc32").get<unsigned long>())
    throw ParseError("checkpoint checksum mismatch", 0);

  ModelParams<T> p;
  p.config = config_from_json(header.at("config"));
  p.layout = std::make_shared<const Layout>(p.config);
  const auto& specs = p.layout->specs();
  const auto& tensors = header.at("tensors");
  if (tensors.size() != specs.size())
    throw ValidationError("checkpoint holds " + std::to_string(tensors.size()) +
                          " tensors, config expects " + std::to_string(specs.size()));
  std::size_t offset = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& t = tensors[i];
    const std::string name = t.at("name");
    const int rows = t.at("rows");
    const int cols = t.at("cols");
    if (name != specs[i].name || rows != specs[i].rows || cols != specs[i].cols)
      throw ValidationError("tensor " + name + " shape " + std::to_string(rows) + "x" +
                            std::to_string(cols) + " does not match " + specs[i].name + " " +
                            std::to_string(specs[i].rows) + "x" + std::to_string(specs[i].cols));
    Mat<T> m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      if (offset + sizeof(double) > payload.size()) throw ParseError("payload too short", 0);
      double d;
      std::memcpy(&d, payload.data() + offset, sizeof d);
      offset += sizeof d;
      m.data()[k] = static_cast<T>(d);
    }
    p.tensors.push_back(std::move(m));
  }
  if (offset != payload.size()) throw ParseError("payload has trailing bytes", 0);
  return p;
}

template <typename T>
void save_checkpoint(const ModelParams<T>& params, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  save_checkpoint(params, f);
}

template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read " + path.string());
  return load_checkpoint<T>(f);
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out;
  out.config = p.config;
  out.layout = p.layout;
  for (const auto& t : p.tensors) out.tensors.push_back(t.template cast<To>());
  return out;
}

#define GECADAPT_INSTANTIATE(T)                                                                 \
  template struct ModelParams<T>;                                                               \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                    \
  template DropoutMasks<T> apply_dropout_masks<T>(const ModelConfig&, std::uint64_t, int, int,  \
                                                  int);                                         \
  template ForwardResult<T> forward_loss<T>(const ModelParams<T>&, const Batch&,                \
                                            const DropoutMasks<T>*);                            \
  template ModelParams<T> backward<T>(ForwardCache<T>&, std::span<const Group>);                \
  template double sequence_log_prob<T>(const ModelParams<T>&, const std::vector<int>&,          \
                                       const std::vector<int>&);                                \
  template std::vector<int> decode_greedy<T>(const ModelParams<T>&, const std::vector<int>&,    \
                                             int);                                              \
  template std::vector<std::vector<int>> decode_greedy_batch<T>(                                \
      const ModelParams<T>&, const std::vector<std::vector<int>>&, int);                        \
  template BeamHypothesis decode_beam_scored<T>(const ModelParams<T>&, const std::vector<int>&, \
                                                int, int);                                      \
  template std::vector<int> decode_beam<T>(const ModelParams<T>&, const std::vector<int>&, int, \
                                           int);                                                \
  template void save_checkpoint<T>(const ModelParams<T>&, const std::filesystem::path&);        \
  template ModelParams<T> load_checkpoint<T>(const std::filesystem::path&);                     \
  template void save_checkpoint<T>(const ModelParams<T>&, std::ostream&);                       \
  template ModelParams<T> load_checkpoint<T>(std::istream&);

GECADAPT_INSTANTIATE(float)
GECADAPT_INSTANTIATE(double)
#undef GECADAPT_INSTANTIATE

template ModelParams<double> cast_params<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_params<float, double>(const ModelParams<double>&);

}  // namespace gecadapt
