#pragma once

#include "dladan/autodiff.hpp"
#include "dladan/corpus.hpp"

namespace dladan {

// ---------------------------------------------------------------------------
// GRU cells
// ---------------------------------------------------------------------------

struct GruCellParams {
  Param Wz, Wr, Wh;  // hidden x in
  Param Uz, Ur, Uh;  // hidden x hidden
  Param bz, br, bh;  // hidden x 1
  int in_dim = 0;
  int hidden = 0;

  void init(const std::string& prefix, int in, int hid, std::mt19937_64& rng) {
    in_dim = in;
    hidden = hid;
    auto u = [&](int r, int c) { return Mat::uniform(r, c, -0.1, 0.1, rng); };
    Wz = Param(prefix + ".Wz", u(hid, in));
    Wr = Param(prefix + ".Wr", u(hid, in));
    Wh = Param(prefix + ".Wh", u(hid, in));
    Uz = Param(prefix + ".Uz", u(hid, hid));
    Ur = Param(prefix + ".Ur", u(hid, hid));
    Uh = Param(prefix + ".Uh", u(hid, hid));
    bz = Param(prefix + ".bz", u(hid, 1));
    br = Param(prefix + ".br", u(hid, 1));
    bh = Param(prefix + ".bh", u(hid, 1));
  }

  void collect(std::vector<Param*>& out) {
    for (Param* p : {&Wz, &Wr, &Wh, &Uz, &Ur, &Uh, &bz, &br, &bh}) out.push_back(p);
  }
};

struct GruCellBind {
  Var Wz, Wr, Wh, Uz, Ur, Uh, bz, br, bh;
  int hidden = 0;

  static GruCellBind bind(Tape& t, GruCellParams& p) {
    GruCellBind b;
    b.Wz = t.param(p.Wz);
    b.Wr = t.param(p.Wr);
    b.Wh = t.param(p.Wh);
    b.Uz = t.param(p.Uz);
    b.Ur = t.param(p.Ur);
    b.Uh = t.param(p.Uh);
    b.bz = t.param(p.bz);
    b.br = t.param(p.br);
    b.bh = t.param(p.bh);
    b.hidden = p.hidden;
    return b;
  }
};

// Update/reset-gate recurrence: h' = (1-z)*h + z*hcand.
inline Var gru_step(Tape& t, const GruCellBind& g, Var x, Var h) {
  Var z = t.sigmoid(t.add(t.add(t.matmul(g.Wz, x), t.matmul(g.Uz, h)), g.bz));
  Var r = t.sigmoid(t.add(t.add(t.matmul(g.Wr, x), t.matmul(g.Ur, h)), g.br));
  Var hc = t.tanh_(t.add(t.add(t.matmul(g.Wh, x), t.matmul(g.Uh, t.hadamard(r, h))), g.bh));
  return t.add(t.sub(h, t.hadamard(z, h)), t.hadamard(z, hc));
}

inline std::vector<Var> gru_run(Tape& t, const GruCellBind& g, const std::vector<Var>& xs,
                                bool reverse) {
  std::vector<Var> out(xs.size());
  Var h = t.constant(Mat::zeros(g.hidden, 1));
  if (!reverse) {
    for (size_t i = 0; i < xs.size(); ++i) out[i] = h = gru_step(t, g, xs[i], h);
  } else {
    for (size_t i = xs.size(); i-- > 0;) out[i] = h = gru_step(t, g, xs[i], h);
  }
  return out;
}

struct BiGruParams {
  GruCellParams fwd, bwd;
  int in_dim = 0;
  int state_dim = 0;  // both directions concatenated

  void init(const std::string& prefix, int in, int state, std::mt19937_64& rng) {
    require(state % 2 == 0, "BiGru: state dim must be even");
    in_dim = in;
    state_dim = state;
    fwd.init(prefix + ".fwd", in, state / 2, rng);
    bwd.init(prefix + ".bwd", in, state / 2, rng);
  }

  void collect(std::vector<Param*>& out) {
    fwd.collect(out);
    bwd.collect(out);
  }
};

struct BiGruBind {
  GruCellBind fwd, bwd;

  static BiGruBind bind(Tape& t, BiGruParams& p) {
    return BiGruBind{GruCellBind::bind(t, p.fwd), GruCellBind::bind(t, p.bwd)};
  }
};

inline std::vector<Var> bigru_run(Tape& t, const BiGruBind& g, const std::vector<Var>& xs) {
  auto f = gru_run(t, g.fwd, xs, false);
  auto b = gru_run(t, g.bwd, xs, true);
  std::vector<Var> out(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) out[i] = t.concat_rows(f[i], b[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Attention pooling
// ---------------------------------------------------------------------------

// w_i = softmax_i( tanh(proj_state h_i)^T q ), output = sum_i w_i h_i.
// q is the already-projected query (a learned vector, or W_gq applied to a
// distinction vector). Masked positions get weight exactly 0.
inline Var attention_pool(Tape& t, const std::vector<Var>& states, Var proj_state, Var query,
                          const std::vector<char>& mask = {}) {
  require(!states.empty(), "attention_pool: empty state sequence");
  std::vector<Var> scores;
  scores.reserve(states.size());
  for (const Var& h : states)
    scores.push_back(t.dot_(t.tanh_(t.matmul(proj_state, h)), query));
  Var w = t.softmax(t.stack_scalars(scores), mask);
  Var hmat = t.stack_cols(states);  // d x n
  return t.matmul(hmat, w);         // d x 1
}

// ---------------------------------------------------------------------------
// Hierarchical encoder
// ---------------------------------------------------------------------------

// One parameter set of the word/sentence-level attentive encoder. The basic
// flavor owns learned query vectors u_w/u_s; re-encoder flavors project an
// external distinction vector through W_gw/W_gs instead.
struct EncoderParams {
  BiGruParams word, sent;
  Param Ww, Ws;  // attention state projections
  bool learned_query = true;
  Param uw, us;    // learned queries (basic flavor)
  Param Wgw, Wgs;  // query projections (re-encoder flavor)
  int emb_dim = 0, d_w = 0, d_s = 0, query_dim = 0;

  static EncoderParams basic(const std::string& prefix, int emb_dim, int d_w, int d_s,
                             std::mt19937_64& rng) {
    EncoderParams p;
    p.learned_query = true;
    p.common_init(prefix, emb_dim, d_w, d_s, rng);
    p.uw = Param(prefix + ".uw", Mat::uniform(d_w, 1, -0.1, 0.1, rng));
    p.us = Param(prefix + ".us", Mat::uniform(d_s, 1, -0.1, 0.1, rng));
    return p;
  }

  static EncoderParams with_query(const std::string& prefix, int emb_dim, int d_w, int d_s,
                                  int query_dim, std::mt19937_64& rng) {
    EncoderParams p;
    p.learned_query = false;
    p.query_dim = query_dim;
    p.common_init(prefix, emb_dim, d_w, d_s, rng);
    p.Wgw = Param(prefix + ".Wgw", Mat::uniform(d_w, query_dim, -0.1, 0.1, rng));
    p.Wgs = Param(prefix + ".Wgs", Mat::uniform(d_s, query_dim, -0.1, 0.1, rng));
    return p;
  }

  void collect(std::vector<Param*>& out) {
    word.collect(out);
    sent.collect(out);
    out.push_back(&Ww);
    out.push_back(&Ws);
    if (learned_query) {
      out.push_back(&uw);
      out.push_back(&us);
    } else {
      out.push_back(&Wgw);
      out.push_back(&Wgs);
    }
  }

 private:
  void common_init(const std::string& prefix, int emb, int dw, int ds, std::mt19937_64& rng) {
    emb_dim = emb;
    d_w = dw;
    d_s = ds;
    word.init(prefix + ".word", emb, dw, rng);
    sent.init(prefix + ".sent", dw, ds, rng);
    Ww = Param(prefix + ".Ww", Mat::uniform(dw, dw, -0.1, 0.1, rng));
    Ws = Param(prefix + ".Ws", Mat::uniform(ds, ds, -0.1, 0.1, rng));
  }
};

struct EncoderBind {
  BiGruBind word, sent;
  Var Ww, Ws;
  Var uw, us;    // valid when learned_query
  Var Wgw, Wgs;  // valid otherwise
  bool learned_query = true;

  static EncoderBind bind(Tape& t, EncoderParams& p) {
    EncoderBind b;
    b.word = BiGruBind::bind(t, p.word);
    b.sent = BiGruBind::bind(t, p.sent);
    b.Ww = t.param(p.Ww);
    b.Ws = t.param(p.Ws);
    b.learned_query = p.learned_query;
    if (p.learned_query) {
      b.uw = t.param(p.uw);
      b.us = t.param(p.us);
    } else {
      b.Wgw = t.param(p.Wgw);
      b.Wgs = t.param(p.Wgs);
    }
    return b;
  }
};

// Encodes sentence token-id lists to a d_s vector: word-level BiGRU +
// attention per sentence, then sentence-level BiGRU + attention. `query` is
// the external distinction vector; ignored by learned-query encoders.
inline Var hierarchical_encode_ids(Tape& t, const std::vector<std::vector<int>>& sentences,
                                   Var embedding, const EncoderBind& enc, Var query = {}) {
  require(!sentences.empty(), "hierarchical_encode: fact has no sentences");
  Var qw, qs;
  if (enc.learned_query) {
    qw = enc.uw;
    qs = enc.us;
  } else {
    require(query.valid(), "hierarchical_encode: this encoder needs an external query");
    qw = t.matmul(enc.Wgw, query);
    qs = t.matmul(enc.Wgs, query);
  }
  std::vector<Var> sent_vecs;
  sent_vecs.reserve(sentences.size());
  for (const auto& sent : sentences) {
    require(!sent.empty(), "hierarchical_encode: empty sentence");
    std::vector<Var> xs;
    xs.reserve(sent.size());
    for (int id : sent) xs.push_back(t.transpose(t.row(embedding, id)));
    auto states = bigru_run(t, enc.word, xs);
    sent_vecs.push_back(attention_pool(t, states, enc.Ww, qw));
  }
  auto doc_states = bigru_run(t, enc.sent, sent_vecs);
  return attention_pool(t, doc_states, enc.Ws, qs);
}

inline std::vector<std::vector<int>> fact_to_ids(const LawCase& c, const Vocab& vocab) {
  std::vector<std::vector<int>> out;
  out.reserve(c.fact.size());
  for (const auto& sent : c.fact) {
    std::vector<int> ids;
    ids.reserve(sent.size());
    for (const auto& tok : sent) ids.push_back(vocab.id(tok));
    out.push_back(std::move(ids));
  }
  return out;
}

inline std::vector<std::vector<int>> article_to_ids(const LawArticle& a, const Vocab& vocab) {
  // an article's flat token list is treated as a one-sentence document
  std::vector<int> ids;
  ids.reserve(a.text.size());
  for (const auto& tok : a.text) ids.push_back(vocab.id(tok));
  return {std::move(ids)};
}

}  // namespace dladan
