// Toy-scale recurrent encoder-decoder translation, double precision, trained
// by hand-derived backpropagation. Two variants share one parameter set:
// ENDEC feeds the decoder a fixed context (the final encoder state), SEARCH
// recomputes a soft-attention context at every step.
//
// Cells are gated recurrent units:
//   z = sigma(Wz x + Uz h + [Cz c] + bz)
//   r = sigma(Wr x + Ur h + [Cr c] + br)
//   g = tanh (Wh x + Uh (r*h) + [Ch c] + bh)
//   h' = (1-z)*h + z*g
// Attention energies: e_j = v . tanh(Wa s_prev + Ua h_j), alpha = softmax(e),
// context c = sum_j alpha_j h_j. Output logits: Wo [s; c] + bo.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mtlab/common.hpp"
#include "mtlab/corpus.hpp"

namespace mtlab::neural {

using Vec = std::vector<double>;

struct Mat {
  int rows = 0, cols = 0;
  Vec a;

  void init(int r, int c) {
    rows = r;
    cols = c;
    a.assign(size_t(r) * size_t(c), 0.0);
  }
  double& at(int r, int c) { return a[size_t(r) * cols + c]; }
  double at(int r, int c) const { return a[size_t(r) * cols + c]; }
};

namespace detail {

inline void mat_vec_add(const Mat& m, const Vec& x, Vec& out) {
  for (int r = 0; r < m.rows; ++r) {
    double s = 0.0;
    const double* row = m.a.data() + size_t(r) * m.cols;
    for (int c = 0; c < m.cols; ++c) s += row[c] * x[c];
    out[r] += s;
  }
}

inline void mat_tvec_add(const Mat& m, const Vec& y, Vec& out) {
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.a.data() + size_t(r) * m.cols;
    double yr = y[r];
    for (int c = 0; c < m.cols; ++c) out[c] += row[c] * yr;
  }
}

inline void outer_add(Mat& m, const Vec& y, const Vec& x) {
  for (int r = 0; r < m.rows; ++r) {
    double* row = m.a.data() + size_t(r) * m.cols;
    double yr = y[r];
    for (int c = 0; c < m.cols; ++c) row[c] += yr * x[c];
  }
}

inline void add(Vec& out, const Vec& x) {
  for (size_t i = 0; i < out.size(); ++i) out[i] += x[i];
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

struct Dims {
  int embed = 32;
  int hidden = 32;
  int src_vocab = 0;
  int tgt_vocab = 0;
};

struct GruCell {
  Mat wz, wr, wh;  // hidden x input
  Mat uz, ur, uh;  // hidden x hidden
  Vec bz, br, bh;

  void init(int input, int hidden) {
    wz.init(hidden, input);
    wr.init(hidden, input);
    wh.init(hidden, input);
    uz.init(hidden, hidden);
    ur.init(hidden, hidden);
    uh.init(hidden, hidden);
    bz.assign(hidden, 0.0);
    br.assign(hidden, 0.0);
    bh.assign(hidden, 0.0);
  }
};

// Decoder cell adds context projections (hidden x 2*hidden).
struct DecGruCell : GruCell {
  Mat cz, cr, ch;

  void init(int input, int hidden) {
    GruCell::init(input, hidden);
    cz.init(hidden, 2 * hidden);
    cr.init(hidden, 2 * hidden);
    ch.init(hidden, 2 * hidden);
  }
};

struct Seq2SeqParams {
  Dims dims;
  Mat src_embed, tgt_embed;  // vocab x embed
  GruCell enc_fwd, enc_bwd;
  DecGruCell dec;
  Mat attn_w;  // hidden x hidden  (s_prev projection)
  Mat attn_u;  // hidden x 2*hidden (encoder state projection)
  Vec attn_v;  // hidden
  Mat out_w;   // tgt_vocab x 3*hidden ([s; c] projection)
  Vec out_b;   // tgt_vocab

  void init_shapes(const Dims& d) {
    dims = d;
    src_embed.init(d.src_vocab, d.embed);
    tgt_embed.init(d.tgt_vocab, d.embed);
    enc_fwd.init(d.embed, d.hidden);
    enc_bwd.init(d.embed, d.hidden);
    dec.init(d.embed, d.hidden);
    attn_w.init(d.hidden, d.hidden);
    attn_u.init(d.hidden, 2 * d.hidden);
    attn_v.assign(d.hidden, 0.0);
    out_w.init(d.tgt_vocab, 3 * d.hidden);
    out_b.assign(d.tgt_vocab, 0.0);
  }

  // Named flat views in a fixed order; this order defines the checkpoint
  // layout and the init/update traversal.
  std::vector<std::pair<std::string, Vec*>> tensors() {
    return {
        {"src_embed", &src_embed.a}, {"tgt_embed", &tgt_embed.a},
        {"enc_fwd.wz", &enc_fwd.wz.a}, {"enc_fwd.wr", &enc_fwd.wr.a},
        {"enc_fwd.wh", &enc_fwd.wh.a}, {"enc_fwd.uz", &enc_fwd.uz.a},
        {"enc_fwd.ur", &enc_fwd.ur.a}, {"enc_fwd.uh", &enc_fwd.uh.a},
        {"enc_fwd.bz", &enc_fwd.bz},   {"enc_fwd.br", &enc_fwd.br},
        {"enc_fwd.bh", &enc_fwd.bh},
        {"enc_bwd.wz", &enc_bwd.wz.a}, {"enc_bwd.wr", &enc_bwd.wr.a},
        {"enc_bwd.wh", &enc_bwd.wh.a}, {"enc_bwd.uz", &enc_bwd.uz.a},
        {"enc_bwd.ur", &enc_bwd.ur.a}, {"enc_bwd.uh", &enc_bwd.uh.a},
        {"enc_bwd.bz", &enc_bwd.bz},   {"enc_bwd.br", &enc_bwd.br},
        {"enc_bwd.bh", &enc_bwd.bh},
        {"dec.wz", &dec.wz.a}, {"dec.wr", &dec.wr.a}, {"dec.wh", &dec.wh.a},
        {"dec.uz", &dec.uz.a}, {"dec.ur", &dec.ur.a}, {"dec.uh", &dec.uh.a},
        {"dec.cz", &dec.cz.a}, {"dec.cr", &dec.cr.a}, {"dec.ch", &dec.ch.a},
        {"dec.bz", &dec.bz},   {"dec.br", &dec.br},   {"dec.bh", &dec.bh},
        {"attn_w", &attn_w.a}, {"attn_u", &attn_u.a}, {"attn_v", &attn_v},
        {"out_w", &out_w.a},   {"out_b", &out_b},
    };
  }
};

enum class Variant { kEndec, kSearch };

inline const char* variant_name(Variant v) {
  return v == Variant::kEndec ? "endec" : "search";
}

inline Seq2SeqParams init_params(const Dims& dims, uint64_t seed) {
  if (dims.embed < 1 || dims.hidden < 1 || dims.src_vocab < 1 || dims.tgt_vocab < 1)
    fail("init_params: all dimensions must be positive");
  Seq2SeqParams p;
  p.init_shapes(dims);
  Rng rng(seed);
  for (auto& [name, tensor] : p.tensors()) {
    (void)name;
    for (double& v : *tensor) v = rng.uniform(-0.08, 0.08);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward pieces

struct GruStepCache {
  Vec z, r, g, h;  // gate activations and the new state
};

namespace detail {

inline GruStepCache gru_step(const GruCell& cell, const Vec& x, const Vec& hp,
                             const Mat* cz, const Mat* cr, const Mat* ch,
                             const Vec* context) {
  int H = int(cell.bz.size());
  GruStepCache s;
  Vec az = cell.bz, ar = cell.br;
  mat_vec_add(cell.wz, x, az);
  mat_vec_add(cell.uz, hp, az);
  mat_vec_add(cell.wr, x, ar);
  mat_vec_add(cell.ur, hp, ar);
  if (context) {
    mat_vec_add(*cz, *context, az);
    mat_vec_add(*cr, *context, ar);
  }
  s.z.resize(H);
  s.r.resize(H);
  for (int i = 0; i < H; ++i) {
    s.z[i] = sigmoid(az[i]);
    s.r[i] = sigmoid(ar[i]);
  }
  Vec rh(H);
  for (int i = 0; i < H; ++i) rh[i] = s.r[i] * hp[i];
  Vec ah = cell.bh;
  mat_vec_add(cell.wh, x, ah);
  mat_vec_add(cell.uh, rh, ah);
  if (context) mat_vec_add(*ch, *context, ah);
  s.g.resize(H);
  s.h.resize(H);
  for (int i = 0; i < H; ++i) {
    s.g[i] = std::tanh(ah[i]);
    s.h[i] = (1.0 - s.z[i]) * hp[i] + s.z[i] * s.g[i];
  }
  return s;
}

// Backward through one GRU step. dh is d(loss)/d(new state); outputs are
// accumulated into the gradient cell and dx/dhp/dcontext.
inline void gru_step_backward(const GruCell& cell, const Vec& x, const Vec& hp,
                              const GruStepCache& s, const Vec& dh, GruCell& grad,
                              Vec& dx, Vec& dhp, const Mat* cz, const Mat* cr,
                              const Mat* ch, Mat* gcz, Mat* gcr, Mat* gch,
                              const Vec* context, Vec* dcontext) {
  int H = int(cell.bz.size());
  Vec dz(H), dg(H);
  for (int i = 0; i < H; ++i) {
    dz[i] = dh[i] * (s.g[i] - hp[i]);
    dg[i] = dh[i] * s.z[i];
    dhp[i] += dh[i] * (1.0 - s.z[i]);
  }
  Vec dah(H);
  for (int i = 0; i < H; ++i) dah[i] = dg[i] * (1.0 - s.g[i] * s.g[i]);
  Vec rh(H);
  for (int i = 0; i < H; ++i) rh[i] = s.r[i] * hp[i];
  outer_add(grad.wh, dah, x);
  outer_add(grad.uh, dah, rh);
  add(grad.bh, dah);
  mat_tvec_add(cell.wh, dah, dx);
  Vec drh(size_t(H), 0.0);
  mat_tvec_add(cell.uh, dah, drh);
  if (ch) {
    outer_add(*gch, dah, *context);
    mat_tvec_add(*ch, dah, *dcontext);
  }
  Vec dr(H);
  for (int i = 0; i < H; ++i) {
    dr[i] = drh[i] * hp[i];
    dhp[i] += drh[i] * s.r[i];
  }
  Vec daz(H), dar(H);
  for (int i = 0; i < H; ++i) {
    daz[i] = dz[i] * s.z[i] * (1.0 - s.z[i]);
    dar[i] = dr[i] * s.r[i] * (1.0 - s.r[i]);
  }
  outer_add(grad.wz, daz, x);
  outer_add(grad.uz, daz, hp);
  add(grad.bz, daz);
  mat_tvec_add(cell.wz, daz, dx);
  mat_tvec_add(cell.uz, daz, dhp);
  outer_add(grad.wr, dar, x);
  outer_add(grad.ur, dar, hp);
  add(grad.br, dar);
  mat_tvec_add(cell.wr, dar, dx);
  mat_tvec_add(cell.ur, dar, dhp);
  if (cz) {
    outer_add(*gcz, daz, *context);
    mat_tvec_add(*cz, daz, *dcontext);
    outer_add(*gcr, dar, *context);
    mat_tvec_add(*cr, dar, *dcontext);
  }
}

}  // namespace detail

struct EncoderStates {
  // h[j] = [forward_j ; backward_j], width 2*hidden, j = 0..T-1.
  std::vector<Vec> h;
  // caches for backpropagation
  std::vector<GruStepCache> fwd, bwd;
};

inline EncoderStates encode(const Seq2SeqParams& p, const std::vector<uint32_t>& source) {
  if (source.empty()) fail("encode: empty source");
  int H = p.dims.hidden, E = p.dims.embed;
  int T = int(source.size());
  for (uint32_t id : source)
    if (id >= uint32_t(p.dims.src_vocab)) fail("encode: source id ", id, " out of range");

  EncoderStates st;
  st.fwd.resize(T);
  st.bwd.resize(T);
  st.h.assign(T, Vec(size_t(2 * H), 0.0));
  Vec x(E), hp(size_t(H), 0.0);
  for (int j = 0; j < T; ++j) {
    for (int k = 0; k < E; ++k) x[k] = p.src_embed.at(int(source[j]), k);
    st.fwd[j] = detail::gru_step(p.enc_fwd, x, hp, nullptr, nullptr, nullptr, nullptr);
    hp = st.fwd[j].h;
    for (int k = 0; k < H; ++k) st.h[j][k] = hp[k];
  }
  hp.assign(size_t(H), 0.0);
  for (int j = T - 1; j >= 0; --j) {
    for (int k = 0; k < E; ++k) x[k] = p.src_embed.at(int(source[j]), k);
    st.bwd[j] = detail::gru_step(p.enc_bwd, x, hp, nullptr, nullptr, nullptr, nullptr);
    hp = st.bwd[j].h;
    for (int k = 0; k < H; ++k) st.h[j][size_t(H) + k] = hp[k];
  }
  return st;
}

// Fixed-length context: the final encoder state, identical at every step.
inline Vec context_endec(const EncoderStates& states) {
  return states.h.back();
}

struct AttentionStep {
  Vec context;  // 2*hidden
  Vec alpha;    // T
  std::vector<Vec> tanh_q;  // per source position, for backprop
};

inline AttentionStep context_search(const Seq2SeqParams& p, const EncoderStates& states,
                                    const Vec& s_prev) {
  int H = p.dims.hidden;
  int T = int(states.h.size());
  AttentionStep a;
  Vec ws(size_t(H), 0.0);
  detail::mat_vec_add(p.attn_w, s_prev, ws);
  a.tanh_q.resize(T);
  Vec energy(T);
  double max_e = -1e300;
  for (int j = 0; j < T; ++j) {
    Vec q = ws;
    detail::mat_vec_add(p.attn_u, states.h[j], q);
    a.tanh_q[j].resize(H);
    double e = 0.0;
    for (int k = 0; k < H; ++k) {
      a.tanh_q[j][k] = std::tanh(q[k]);
      e += p.attn_v[k] * a.tanh_q[j][k];
    }
    energy[j] = e;
    max_e = std::max(max_e, e);
  }
  a.alpha.resize(T);
  double z = 0.0;
  for (int j = 0; j < T; ++j) {
    a.alpha[j] = std::exp(energy[j] - max_e);
    z += a.alpha[j];
  }
  a.context.assign(size_t(2 * H), 0.0);
  for (int j = 0; j < T; ++j) {
    a.alpha[j] /= z;
    for (int k = 0; k < 2 * H; ++k) a.context[k] += a.alpha[j] * states.h[j][k];
  }
  return a;
}

struct AttentionTrace {
  std::vector<Vec> alpha;    // per decoder step (empty rows for ENDEC)
  std::vector<Vec> context;  // per decoder step
};

struct ForwardResult {
  double loss = 0.0;
  AttentionTrace trace;
};

namespace detail {

struct DecoderCache {
  // per step caches
  std::vector<Vec> input_emb;
  std::vector<GruStepCache> gru;
  std::vector<AttentionStep> attn;     // SEARCH
  std::vector<Vec> context;            // both variants
  std::vector<Vec> probs;              // softmax outputs
  std::vector<uint32_t> inputs;        // teacher-forced input token per step
  std::vector<uint32_t> targets;       // gold output token per step
  double loss = 0.0;
};

inline DecoderCache decode_teacher_forced(const Seq2SeqParams& p,
                                          const EncoderStates& enc,
                                          const std::vector<uint32_t>& target,
                                          Variant variant) {
  if (target.empty()) fail("forward_loss: empty target");
  for (uint32_t id : target)
    if (id >= uint32_t(p.dims.tgt_vocab)) fail("forward_loss: target id ", id, " out of range");
  int H = p.dims.hidden, E = p.dims.embed, V = p.dims.tgt_vocab;
  int L = int(target.size()) + 1;  // predict every target token plus the end marker

  DecoderCache c;
  c.inputs.resize(L);
  c.targets.resize(L);
  for (int i = 0; i < L; ++i) {
    c.inputs[i] = i == 0 ? corpus::Vocabulary::kStartId : target[i - 1];
    c.targets[i] = i < L - 1 ? target[i] : corpus::Vocabulary::kEndId;
  }
  c.input_emb.assign(L, Vec(E));
  c.gru.resize(L);
  c.context.resize(L);
  c.probs.assign(L, Vec(V));
  if (variant == Variant::kSearch) c.attn.resize(L);

  Vec fixed_context;
  if (variant == Variant::kEndec) fixed_context = context_endec(enc);

  Vec s(size_t(H), 0.0);
  double total = 0.0;
  for (int i = 0; i < L; ++i) {
    for (int k = 0; k < E; ++k) c.input_emb[i][k] = p.tgt_embed.at(int(c.inputs[i]), k);
    if (variant == Variant::kSearch) {
      c.attn[i] = context_search(p, enc, s);
      c.context[i] = c.attn[i].context;
    } else {
      c.context[i] = fixed_context;
    }
    c.gru[i] = gru_step(p.dec, c.input_emb[i], s, &p.dec.cz, &p.dec.cr, &p.dec.ch,
                        &c.context[i]);
    const Vec& snew = c.gru[i].h;
    // logits over [s; c]
    Vec logits = p.out_b;
    for (int r = 0; r < V; ++r) {
      const double* row = p.out_w.a.data() + size_t(r) * p.out_w.cols;
      double acc = 0.0;
      for (int k = 0; k < H; ++k) acc += row[k] * snew[k];
      for (int k = 0; k < 2 * H; ++k) acc += row[H + k] * c.context[i][k];
      logits[r] += acc;
    }
    double mx = logits[0];
    for (int r = 1; r < V; ++r) mx = std::max(mx, logits[r]);
    double z = 0.0;
    for (int r = 0; r < V; ++r) {
      c.probs[i][r] = std::exp(logits[r] - mx);
      z += c.probs[i][r];
    }
    for (int r = 0; r < V; ++r) c.probs[i][r] /= z;
    total -= std::log(c.probs[i][c.targets[i]]);
    s = snew;
  }
  c.loss = total / double(L);
  return c;
}

}  // namespace detail

inline ForwardResult forward_loss(const Seq2SeqParams& p,
                                  const std::vector<uint32_t>& source,
                                  const std::vector<uint32_t>& target, Variant variant,
                                  size_t max_len = 50) {
  if (source.size() > max_len || target.size() > max_len)
    fail("forward_loss: sentence longer than ", max_len, " tokens");
  EncoderStates enc = encode(p, source);
  auto cache = detail::decode_teacher_forced(p, enc, target, variant);
  ForwardResult r;
  r.loss = cache.loss;
  int L = int(cache.targets.size());
  r.trace.context.resize(L);
  r.trace.alpha.resize(L);
  for (int i = 0; i < L; ++i) {
    r.trace.context[i] = cache.context[i];
    if (variant == Variant::kSearch) r.trace.alpha[i] = cache.attn[i].alpha;
  }
  return r;
}

struct BackwardResult {
  double loss = 0.0;
  Seq2SeqParams grads;
};

inline BackwardResult backward(const Seq2SeqParams& p,
                               const std::vector<uint32_t>& source,
                               const std::vector<uint32_t>& target, Variant variant,
                               size_t max_len = 50) {
  if (source.size() > max_len || target.size() > max_len)
    fail("backward: sentence longer than ", max_len, " tokens");
  EncoderStates enc = encode(p, source);
  auto cache = detail::decode_teacher_forced(p, enc, target, variant);

  int H = p.dims.hidden, E = p.dims.embed, V = p.dims.tgt_vocab;
  int T = int(source.size());
  int L = int(cache.targets.size());
  BackwardResult out;
  out.loss = cache.loss;
  out.grads.init_shapes(p.dims);
  Seq2SeqParams& g = out.grads;

  std::vector<Vec> dh(T, Vec(size_t(2 * H), 0.0));  // d/d encoder states
  Vec ds(size_t(H), 0.0);                           // d/d s_i carried backwards
  double inv_l = 1.0 / double(L);
  Vec s0(size_t(H), 0.0);  // decoder start state is a constant zero vector

  for (int i = L - 1; i >= 0; --i) {
    const Vec& s_prev = i == 0 ? s0 : cache.gru[i - 1].h;
    const Vec& s_new = cache.gru[i].h;
    // Output layer: dlogits = (p - onehot(target)) / L
    Vec dlogits = cache.probs[i];
    dlogits[cache.targets[i]] -= 1.0;
    for (int r = 0; r < V; ++r) dlogits[r] *= inv_l;
    Vec dcontext(size_t(2 * H), 0.0);
    for (int r = 0; r < V; ++r) {
      double* grow = g.out_w.a.data() + size_t(r) * g.out_w.cols;
      const double* row = p.out_w.a.data() + size_t(r) * p.out_w.cols;
      double dr = dlogits[r];
      for (int k = 0; k < H; ++k) {
        grow[k] += dr * s_new[k];
        ds[k] += row[k] * dr;
      }
      for (int k = 0; k < 2 * H; ++k) {
        grow[H + k] += dr * cache.context[i][k];
        dcontext[k] += row[H + k] * dr;
      }
      g.out_b[r] += dr;
    }

    // GRU step backward: consumes ds (gradient w.r.t. s_i).
    Vec dx(size_t(E), 0.0), dhp(size_t(H), 0.0);
    detail::gru_step_backward(p.dec, cache.input_emb[i], s_prev, cache.gru[i], ds,
                              g.dec, dx, dhp, &p.dec.cz, &p.dec.cr, &p.dec.ch,
                              &g.dec.cz, &g.dec.cr, &g.dec.ch, &cache.context[i],
                              &dcontext);
    for (int k = 0; k < E; ++k) g.tgt_embed.at(int(cache.inputs[i]), k) += dx[k];

    if (variant == Variant::kSearch) {
      const AttentionStep& at = cache.attn[i];
      // context = sum alpha_j h_j
      Vec dalpha(T, 0.0);
      for (int j = 0; j < T; ++j) {
        double s = 0.0;
        for (int k = 0; k < 2 * H; ++k) {
          s += dcontext[k] * enc.h[j][k];
          dh[j][k] += at.alpha[j] * dcontext[k];
        }
        dalpha[j] = s;
      }
      double dot = 0.0;
      for (int j = 0; j < T; ++j) dot += at.alpha[j] * dalpha[j];
      Vec dws(size_t(H), 0.0);
      for (int j = 0; j < T; ++j) {
        double de = at.alpha[j] * (dalpha[j] - dot);
        // e_j = v . tanh(q_j)
        Vec dq(size_t(H), 0.0);
        for (int k = 0; k < H; ++k) {
          double t = at.tanh_q[j][k];
          g.attn_v[k] += de * t;
          dq[k] = de * p.attn_v[k] * (1.0 - t * t);
        }
        detail::outer_add(g.attn_u, dq, enc.h[j]);
        detail::mat_tvec_add(p.attn_u, dq, dh[j]);
        detail::add(dws, dq);
      }
      detail::outer_add(g.attn_w, dws, s_prev);
      detail::mat_tvec_add(p.attn_w, dws, dhp);  // attention reads s_{i-1}
    } else {
      // fixed context = h_{T-1}
      detail::add(dh[T - 1], dcontext);
    }
    ds = std::move(dhp);
  }
  // ds now holds d/d s_0; s_0 is a constant zero vector, so it is dropped.

  // Encoder backward. Forward chain: j descending; backward chain ascending.
  {
    Vec carry(size_t(H), 0.0);
    Vec x(E);
    for (int j = T - 1; j >= 0; --j) {
      Vec dstate(dh[j].begin(), dh[j].begin() + H);
      detail::add(dstate, carry);
      const Vec hp = j == 0 ? Vec(size_t(H), 0.0) : enc.fwd[j - 1].h;
      for (int k = 0; k < E; ++k) x[k] = p.src_embed.at(int(source[j]), k);
      Vec dx(size_t(E), 0.0);
      carry.assign(size_t(H), 0.0);
      detail::gru_step_backward(p.enc_fwd, x, hp, enc.fwd[j], dstate, g.enc_fwd, dx,
                                carry, nullptr, nullptr, nullptr, nullptr, nullptr,
                                nullptr, nullptr, nullptr);
      for (int k = 0; k < E; ++k) g.src_embed.at(int(source[j]), k) += dx[k];
    }
  }
  {
    Vec carry(size_t(H), 0.0);
    Vec x(E);
    for (int j = 0; j < T; ++j) {
      Vec dstate(dh[j].begin() + H, dh[j].end());
      detail::add(dstate, carry);
      const Vec hp = j == T - 1 ? Vec(size_t(H), 0.0) : enc.bwd[j + 1].h;
      for (int k = 0; k < E; ++k) x[k] = p.src_embed.at(int(source[j]), k);
      Vec dx(size_t(E), 0.0);
      carry.assign(size_t(H), 0.0);
      detail::gru_step_backward(p.enc_bwd, x, hp, enc.bwd[j], dstate, g.enc_bwd, dx,
                                carry, nullptr, nullptr, nullptr, nullptr, nullptr,
                                nullptr, nullptr, nullptr);
      for (int k = 0; k < E; ++k) g.src_embed.at(int(source[j]), k) += dx[k];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  Variant variant = Variant::kSearch;
  int hidden = 32;
  int embed = 32;
  int max_updates = 3000;
  int batch_size = 1;  // sentences averaged per update
  double learning_rate = 0.2;
  double clip_norm = 5.0;
  uint64_t seed = 1;
  size_t max_sentence_len = 50;
};

struct TrainResult {
  Seq2SeqParams params;
  std::vector<double> losses;      // one per update
  std::vector<double> grad_norms;  // pre-clip global norm per update
};

inline TrainResult train(const std::vector<std::pair<std::vector<uint32_t>,
                                                     std::vector<uint32_t>>>& pairs,
                         int src_vocab, int tgt_vocab, const TrainConfig& config) {
  std::vector<size_t> usable;
  for (size_t i = 0; i < pairs.size(); ++i)
    if (!pairs[i].first.empty() && !pairs[i].second.empty() &&
        pairs[i].first.size() <= config.max_sentence_len &&
        pairs[i].second.size() <= config.max_sentence_len)
      usable.push_back(i);
  if (usable.empty()) fail("train: no usable sentence pairs");

  Dims dims;
  dims.embed = config.embed;
  dims.hidden = config.hidden;
  dims.src_vocab = src_vocab;
  dims.tgt_vocab = tgt_vocab;
  TrainResult r;
  r.params = init_params(dims, config.seed);
  Rng rng(config.seed + 0x9E3779B97F4A7C15ull);

  int batch = std::max(config.batch_size, 1);
  for (int update = 0; update < config.max_updates; ++update) {
    BackwardResult bw;
    double loss = 0.0;
    for (int b = 0; b < batch; ++b) {
      const auto& pair = pairs[usable[rng.below(uint32_t(usable.size()))]];
      auto one = backward(r.params, pair.first, pair.second, config.variant,
                          config.max_sentence_len);
      loss += one.loss;
      if (b == 0) {
        bw = std::move(one);
      } else {
        auto dst = bw.grads.tensors();
        auto src = one.grads.tensors();
        for (size_t t = 0; t < dst.size(); ++t)
          for (size_t k = 0; k < dst[t].second->size(); ++k)
            (*dst[t].second)[k] += (*src[t].second)[k];
      }
    }
    loss /= batch;
    if (batch > 1) {
      auto gts0 = bw.grads.tensors();
      for (auto& [name, t] : gts0) {
        (void)name;
        for (double& v : *t) v /= batch;
      }
    }
    if (!std::isfinite(loss))
      fail("train: loss diverged at update ", update);
    r.losses.push_back(loss);

    double norm2 = 0.0;
    auto gts = bw.grads.tensors();
    for (auto& [name, t] : gts) {
      (void)name;
      for (double v : *t) norm2 += v * v;
    }
    double norm = std::sqrt(norm2);
    r.grad_norms.push_back(norm);
    double scale = config.learning_rate;
    if (config.clip_norm > 0.0 && norm > config.clip_norm)
      scale *= config.clip_norm / norm;
    auto pts = r.params.tensors();
    for (size_t t = 0; t < pts.size(); ++t) {
      Vec& pv = *pts[t].second;
      const Vec& gv = *gts[t].second;
      for (size_t k = 0; k < pv.size(); ++k) pv[k] -= scale * gv[k];
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Inference

struct TranslationResult {
  std::vector<uint32_t> target;
  AttentionTrace trace;
};

namespace detail {

struct StepOut {
  Vec s;
  Vec context;
  Vec alpha;
  Vec log_probs;
};

inline StepOut decode_step(const Seq2SeqParams& p, const EncoderStates& enc,
                           const Vec& s_prev, uint32_t input, Variant variant,
                           const Vec& fixed_context) {
  int H = p.dims.hidden, E = p.dims.embed, V = p.dims.tgt_vocab;
  StepOut o;
  Vec x(E);
  for (int k = 0; k < E; ++k) x[k] = p.tgt_embed.at(int(input), k);
  if (variant == Variant::kSearch) {
    AttentionStep a = context_search(p, enc, s_prev);
    o.context = std::move(a.context);
    o.alpha = std::move(a.alpha);
  } else {
    o.context = fixed_context;
  }
  GruStepCache gc = gru_step(p.dec, x, s_prev, &p.dec.cz, &p.dec.cr, &p.dec.ch,
                             &o.context);
  o.s = std::move(gc.h);
  Vec logits = p.out_b;
  for (int r = 0; r < V; ++r) {
    const double* row = p.out_w.a.data() + size_t(r) * p.out_w.cols;
    double acc = 0.0;
    for (int k = 0; k < H; ++k) acc += row[k] * o.s[k];
    for (int k = 0; k < 2 * H; ++k) acc += row[H + k] * o.context[k];
    logits[r] += acc;
  }
  double mx = logits[0];
  for (int r = 1; r < V; ++r) mx = std::max(mx, logits[r]);
  double z = 0.0;
  for (int r = 0; r < V; ++r) z += std::exp(logits[r] - mx);
  double lz = std::log(z) + mx;
  o.log_probs.resize(V);
  for (int r = 0; r < V; ++r) o.log_probs[r] = logits[r] - lz;
  return o;
}

}  // namespace detail

inline TranslationResult translate_greedy(const Seq2SeqParams& p,
                                          const std::vector<uint32_t>& source,
                                          Variant variant, int max_out_len = 64) {
  EncoderStates enc = encode(p, source);
  Vec fixed;
  if (variant == Variant::kEndec) fixed = context_endec(enc);
  TranslationResult r;
  Vec s(size_t(p.dims.hidden), 0.0);
  uint32_t input = corpus::Vocabulary::kStartId;
  for (int step = 0; step < max_out_len; ++step) {
    auto o = detail::decode_step(p, enc, s, input, variant, fixed);
    uint32_t best = 0;
    for (int v = 1; v < p.dims.tgt_vocab; ++v)
      if (o.log_probs[v] > o.log_probs[best]) best = uint32_t(v);  // tie: lowest id
    r.trace.alpha.push_back(o.alpha);
    r.trace.context.push_back(o.context);
    if (best == corpus::Vocabulary::kEndId) break;
    r.target.push_back(best);
    s = std::move(o.s);
    input = best;
  }
  return r;
}

inline TranslationResult translate_beam(const Seq2SeqParams& p,
                                        const std::vector<uint32_t>& source,
                                        Variant variant, int beam,
                                        int max_out_len = 64) {
  if (beam < 1) fail("translate_beam: beam must be >= 1");
  EncoderStates enc = encode(p, source);
  Vec fixed;
  if (variant == Variant::kEndec) fixed = context_endec(enc);

  struct Prefix {
    std::vector<uint32_t> tokens;
    double log_prob = 0.0;
    Vec s;
    uint32_t input = corpus::Vocabulary::kStartId;
    AttentionTrace trace;
    bool finished = false;
  };
  std::vector<Prefix> beams(1);
  beams[0].s.assign(size_t(p.dims.hidden), 0.0);
  std::vector<Prefix> finished;

  for (int step = 0; step < max_out_len; ++step) {
    struct Cand {
      double log_prob;
      size_t parent;
      uint32_t token;
    };
    std::vector<Cand> cands;
    std::vector<detail::StepOut> outs(beams.size());
    bool any_open = false;
    for (size_t b = 0; b < beams.size(); ++b) {
      if (beams[b].finished) continue;
      any_open = true;
      outs[b] = detail::decode_step(p, enc, beams[b].s, beams[b].input, variant, fixed);
      for (int v = 0; v < p.dims.tgt_vocab; ++v)
        cands.push_back({beams[b].log_prob + outs[b].log_probs[v], b, uint32_t(v)});
    }
    if (!any_open) break;
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.token < b.token;
    });
    std::vector<Prefix> next;
    for (const Cand& c : cands) {
      if (int(next.size()) >= beam) break;
      Prefix pref = beams[c.parent];
      pref.log_prob = c.log_prob;
      pref.trace.alpha.push_back(outs[c.parent].alpha);
      pref.trace.context.push_back(outs[c.parent].context);
      if (c.token == corpus::Vocabulary::kEndId) {
        pref.finished = true;
        finished.push_back(pref);
      } else {
        pref.tokens.push_back(c.token);
        pref.s = outs[c.parent].s;
        pref.input = c.token;
      }
      next.push_back(std::move(pref));
    }
    beams = std::move(next);
    bool all_done = true;
    for (const auto& b : beams) all_done &= b.finished;
    if (all_done) break;
  }
  const Prefix* best = nullptr;
  for (const auto& f : finished)
    if (!best || f.log_prob > best->log_prob) best = &f;
  if (!best)
    for (const auto& b : beams)
      if (!best || b.log_prob > best->log_prob) best = &b;
  TranslationResult r;
  r.target = best->tokens;
  r.trace = best->trace;
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints. Layout: magic "PNMT1" | u8 version=1 | u8 variant |
// u32 embed, hidden, src_vocab, tgt_vocab | tensors as f64 arrays in
// Seq2SeqParams::tensors() order.

namespace detail {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail("neural: truncated checkpoint");
  return v;
}

}  // namespace detail

inline void save_params(const Seq2SeqParams& p, Variant variant, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path);
  out.write("PNMT1", 5);
  detail::put<uint8_t>(out, 1);
  detail::put<uint8_t>(out, variant == Variant::kSearch ? 1 : 0);
  detail::put<uint32_t>(out, uint32_t(p.dims.embed));
  detail::put<uint32_t>(out, uint32_t(p.dims.hidden));
  detail::put<uint32_t>(out, uint32_t(p.dims.src_vocab));
  detail::put<uint32_t>(out, uint32_t(p.dims.tgt_vocab));
  auto tensors = const_cast<Seq2SeqParams&>(p).tensors();
  for (auto& [name, t] : tensors) {
    (void)name;
    out.write(reinterpret_cast<const char*>(t->data()),
              std::streamsize(t->size() * sizeof(double)));
  }
  if (!out) fail("write failed: ", path);
}

struct LoadedParams {
  Seq2SeqParams params;
  Variant variant = Variant::kSearch;
};

inline LoadedParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open ", path);
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, "PNMT1", 5) != 0) fail("neural: bad magic in ", path);
  if (detail::get<uint8_t>(in) != 1) fail("neural: unsupported version");
  LoadedParams lp;
  lp.variant = detail::get<uint8_t>(in) ? Variant::kSearch : Variant::kEndec;
  Dims d;
  d.embed = int(detail::get<uint32_t>(in));
  d.hidden = int(detail::get<uint32_t>(in));
  d.src_vocab = int(detail::get<uint32_t>(in));
  d.tgt_vocab = int(detail::get<uint32_t>(in));
  lp.params.init_shapes(d);
  for (auto& [name, t] : lp.params.tensors()) {
    (void)name;
    in.read(reinterpret_cast<char*>(t->data()),
            std::streamsize(t->size() * sizeof(double)));
    if (!in) fail("neural: truncated checkpoint");
  }
  return lp;
}

}  // namespace mtlab::neural
