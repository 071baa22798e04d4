#include "svc/backbone.hpp"

#include <algorithm>
#include <stdexcept>

#include "transformer_util.hpp"

namespace svc {

namespace {

int lm_intermediate(const ExperimentConfig& cfg) { return 2 * cfg.backbone.lm_hidden; }

std::string lora_suffix(const BackboneRun& run) {
  return run.second_lora ? "lora2" : "lora";
}

}  // namespace

void register_backbone_params(ParamStore& ps, const ExperimentConfig& cfg) {
  const int d = cfg.backbone.lm_hidden;
  ps.add("backbone.embed.sem", "backbone", cfg.corpus.semantic_vocab, d);
  for (int l = 0; l < cfg.corpus.num_quantizers; ++l)
    ps.add("backbone.embed.ac" + std::to_string(l), "backbone", cfg.corpus.codec_vocab, d);
  ps.add("backbone.embed.pos", "backbone", cfg.backbone.max_positions, d);
  ps.add("backbone.embed.mask", "backbone", 1, d);
  for (int i = 0; i < cfg.backbone.lm_layers; ++i)
    register_transformer_layer(ps, "backbone.layer" + std::to_string(i), "backbone", d,
                               lm_intermediate(cfg));
  ps.add("backbone.final_norm.gain", "backbone", 1, d);
  ps.add("backbone.head.sem", "backbone", d, cfg.corpus.semantic_vocab);
  ps.add("backbone.head.tf", "backbone", d, cfg.corpus.d_sem);
  // Acoustic predictor: one transformer layer over the quantizer slots.
  ps.add("backbone.pred.start", "backbone", 1, d);
  ps.add("backbone.pred.slotpos", "backbone", cfg.corpus.num_quantizers, d);
  register_transformer_layer(ps, "backbone.pred.layer", "backbone", d, lm_intermediate(cfg));
  ps.add("backbone.pred.final_norm.gain", "backbone", 1, d);
  for (int l = 0; l < cfg.corpus.num_quantizers; ++l)
    ps.add("backbone.pred.head" + std::to_string(l), "backbone", d, cfg.corpus.codec_vocab);
}

void register_backbone_lora_params(ParamStore& ps, const ExperimentConfig& cfg,
                                   bool second) {
  const std::string group = second ? "backbone-lora2" : "backbone-lora";
  const std::string suffix = second ? "lora2" : "lora";
  for (int i = 0; i < cfg.backbone.lm_layers; ++i)
    register_layer_lora(ps, "backbone.layer" + std::to_string(i), group, suffix,
                        cfg.backbone.lm_hidden, cfg.lora.rank);
}

InterleavedSequence build_sequence(const ExperimentConfig& cfg, const SemSide& prompt_sem,
                                   const AcousticTokens& prompt_ac,
                                   const SemSide& source_sem,
                                   const AcousticTokens& source_ac) {
  const int ratio = cfg.backbone.interleave_ratio;
  if (prompt_ac.frames != ratio * prompt_sem.frames())
    throw std::invalid_argument("build_sequence: prompt violates the frame law");
  if (source_ac.frames != 0 && source_ac.frames != ratio * source_sem.frames())
    throw std::invalid_argument("build_sequence: source violates the frame law");
  const int L = cfg.corpus.num_quantizers;
  if ((prompt_ac.frames > 0 && prompt_ac.quantizers != L) ||
      (source_ac.frames > 0 && source_ac.quantizers != L))
    throw std::invalid_argument("build_sequence: quantizer count mismatch");

  InterleavedSequence seq;
  seq.prompt_sem = prompt_sem;
  seq.source_sem = source_sem;
  seq.quantizers = L;
  const int total = seq.total_frames();
  seq.sem_masked.assign(total, 0);
  seq.ac_codes.assign(static_cast<size_t>(2 * total) * L, -1);
  for (int f = 0; f < prompt_ac.frames; ++f)
    for (int l = 0; l < L; ++l) seq.set_ac_code(f, l, prompt_ac.at(f, l));
  for (int f = 0; f < source_ac.frames; ++f)
    for (int l = 0; l < L; ++l)
      seq.set_ac_code(prompt_ac.frames + f, l, source_ac.at(f, l));
  if (3 * total > cfg.backbone.max_positions)
    throw std::invalid_argument("build_sequence: sequence exceeds max_positions");
  return seq;
}

InterleavedSequence apply_semantic_mask(const InterleavedSequence& seq, double mask_prob,
                                        int mask_span, Rng& rng) {
  InterleavedSequence out = seq;
  const int total = seq.total_frames();
  if (total == 0 || mask_prob <= 0.0) return out;
  if (rng.uniform() >= mask_prob) return out;
  const int span = std::min(std::max(1, mask_span), total);
  const int len = rng.uniform_int(1, span);
  const int start = rng.uniform_int(0, total - len);
  for (int t = start; t < start + len; ++t) out.sem_masked[t] = 1;
  return out;
}

BackboneGraphOut backbone_forward_graph(Graph& g, const ExperimentConfig& cfg,
                                        const InterleavedSequence& seq,
                                        const BackboneRun& run, int limit_positions,
                                        bool with_heads, const SequenceNodes* nodes,
                                        int predictor_from_frame) {
  const int total = seq.total_frames();
  if (total == 0) throw std::invalid_argument("backbone forward: empty sequence");
  const int d = cfg.backbone.lm_hidden;
  const int L = seq.quantizers;
  const int all_positions = seq.positions();
  const int P = limit_positions < 0 ? all_positions : limit_positions;
  if (P < 1 || P > all_positions)
    throw std::invalid_argument("backbone forward: bad position limit");

  // Semantic rows for both sections.
  auto sem_part = [&](const SemSide& side, int override_node) -> int {
    if (side.frames() == 0) return -1;
    if (override_node >= 0) {
      if (g.value(override_node).rows != side.frames() ||
          g.value(override_node).cols != d)
        throw std::invalid_argument("backbone forward: override node shape mismatch");
      return override_node;
    }
    if (side.continuous) {
      if (side.rows.cols != d)
        throw std::invalid_argument("backbone forward: continuous row width mismatch");
      return g.constant(side.rows);
    }
    std::vector<int> idx;
    idx.reserve(side.tokens.size());
    for (auto tok : side.tokens) {
      if (tok < 0 || tok >= cfg.corpus.semantic_vocab)
        throw std::invalid_argument("backbone forward: semantic token out of range");
      idx.push_back(tok);
    }
    return g.gather_param_rows("backbone.embed.sem", idx);
  };
  std::vector<int> parts;
  if (int p = sem_part(seq.prompt_sem, nodes ? nodes->prompt_rows : -1); p >= 0)
    parts.push_back(p);
  if (int p = sem_part(seq.source_sem, nodes ? nodes->source_rows : -1); p >= 0)
    parts.push_back(p);
  int sem_rows = parts.size() == 1 ? parts[0] : g.concat_rows(parts);
  std::vector<int> mask_idx;
  for (int t = 0; t < total; ++t)
    if (seq.sem_masked[t]) mask_idx.push_back(t);
  if (!mask_idx.empty())
    sem_rows = g.replace_rows(sem_rows, mask_idx, g.param("backbone.embed.mask"));

  // Acoustic rows: summed per-quantizer embeddings. Unfilled codes are
  // clamped to 0; the interleave permutation never selects their rows.
  int ac_rows = -1;
  for (int l = 0; l < L; ++l) {
    std::vector<int> idx(2 * total);
    for (int f = 0; f < 2 * total; ++f) {
      const auto code = seq.ac_code(f, l);
      if (code >= cfg.corpus.codec_vocab)
        throw std::invalid_argument("backbone forward: acoustic code out of range");
      idx[f] = std::max<std::int32_t>(code, 0);
    }
    int e = g.gather_param_rows("backbone.embed.ac" + std::to_string(l), idx);
    ac_rows = l == 0 ? e : g.add(ac_rows, e);
  }

  int stacked = g.concat_rows({sem_rows, ac_rows});
  std::vector<int> perm(P);
  for (int p = 0; p < P; ++p) {
    const int t = p / 3;
    const int r = p % 3;
    perm[p] = r == 0 ? t : total + 2 * t + (r - 1);
  }
  for (int p = 0; p < P; ++p) {
    if (perm[p] >= total) {  // AC row: ensure the slot is actually filled
      const int f = perm[p] - total;
      for (int l = 0; l < L; ++l)
        if (seq.ac_code(f, l) < 0)
          throw std::invalid_argument("backbone forward: unfilled acoustic slot in prefix");
    }
  }
  int x = g.gather_rows(stacked, perm);
  std::vector<int> pos_idx(P);
  for (int p = 0; p < P; ++p) pos_idx[p] = p;
  x = g.add(x, g.gather_param_rows("backbone.embed.pos", pos_idx));

  LoraSpec lora{lora_suffix(run), cfg.lora.rank, cfg.lora.alpha};
  for (int i = 0; i < cfg.backbone.lm_layers; ++i)
    x = transformer_layer(g, x, "backbone.layer" + std::to_string(i),
                          cfg.backbone.lm_heads, AttnMask::Causal, 0,
                          run.use_lora ? &lora : nullptr);

  BackboneGraphOut out;
  out.positions = P;
  out.hidden = g.rmsnorm(x, g.param("backbone.final_norm.gain"));
  if (!with_heads) return out;
  if (P != all_positions)
    throw std::invalid_argument("backbone forward: heads need the full sequence");

  std::vector<int> sem_pos(total);
  for (int t = 0; t < total; ++t) sem_pos[t] = InterleavedSequence::sem_position(t);
  int sem_hidden = g.gather_rows(out.hidden, sem_pos);
  out.sem_logits = g.matmul(sem_hidden, g.param("backbone.head.sem"));
  out.foresight = g.matmul(sem_hidden, g.param("backbone.head.tf"));

  // Teacher-forced predictor over frames [predictor_from_frame, 2*total),
  // batched with block-causal attention (one block per frame). Training
  // restricts this to the source frames the loss supervises.
  const int frames = 2 * total;
  const int pred_from = std::clamp(predictor_from_frame, 0, frames - 1);
  const int pframes = frames - pred_from;
  out.pred_from_frame = pred_from;
  std::vector<int> cond_idx(static_cast<size_t>(pframes) * L);
  for (int i = 0; i < pframes; ++i)
    for (int l = 0; l < L; ++l)
      cond_idx[static_cast<size_t>(i) * L + l] =
          InterleavedSequence::ac_position(pred_from + i) - 1;
  int cond_rows = g.gather_rows(out.hidden, cond_idx);

  // Slot input embeddings: start token for slot 0, previous code otherwise.
  // Built slot-major from the parameter tables, then permuted frame-major.
  std::vector<int> prev_parts;
  prev_parts.push_back(
      g.gather_param_rows("backbone.pred.start", std::vector<int>(pframes, 0)));
  for (int l = 0; l + 1 < L; ++l) {
    std::vector<int> codes_idx(pframes);
    for (int i = 0; i < pframes; ++i) {
      const auto code = seq.ac_code(pred_from + i, l);
      if (code < 0)
        throw std::invalid_argument("backbone forward: predictor needs filled codes");
      codes_idx[i] = code;
    }
    prev_parts.push_back(
        g.gather_param_rows("backbone.embed.ac" + std::to_string(l), codes_idx));
  }
  int slot_major = g.concat_rows(prev_parts);
  std::vector<int> perm2(static_cast<size_t>(pframes) * L);
  for (int i = 0; i < pframes; ++i)
    for (int l = 0; l < L; ++l)
      perm2[static_cast<size_t>(i) * L + l] = l * pframes + i;
  int prev_rows = g.gather_rows(slot_major, perm2);
  std::vector<int> slot_idx(static_cast<size_t>(pframes) * L);
  for (int i = 0; i < pframes; ++i)
    for (int l = 0; l < L; ++l) slot_idx[static_cast<size_t>(i) * L + l] = l;
  int slot_rows = g.gather_param_rows("backbone.pred.slotpos", slot_idx);
  int px = g.add(g.add(prev_rows, cond_rows), slot_rows);
  px = transformer_layer(g, px, "backbone.pred.layer", cfg.backbone.lm_heads,
                         AttnMask::BlockCausal, L, nullptr);
  px = g.rmsnorm(px, g.param("backbone.pred.final_norm.gain"));
  out.ac_logits.resize(L);
  for (int l = 0; l < L; ++l) {
    std::vector<int> rows_l(pframes);
    for (int i = 0; i < pframes; ++i) rows_l[i] = i * L + l;
    out.ac_logits[l] = g.matmul(g.gather_rows(px, rows_l),
                                g.param("backbone.pred.head" + std::to_string(l)));
  }
  return out;
}

BackboneForward backbone_forward(const ExperimentConfig& cfg, const ParamStore& ps,
                                 const InterleavedSequence& seq, const BackboneRun& run) {
  Graph g(&ps);
  BackboneGraphOut out = backbone_forward_graph(g, cfg, seq, run);
  BackboneForward f;
  f.hidden = g.value(out.hidden);
  f.sem_logits = g.value(out.sem_logits);
  f.foresight = g.value(out.foresight);
  const int frames = 2 * seq.total_frames();
  const int L = seq.quantizers;
  f.ac_logits = Tensor(frames * L, cfg.corpus.codec_vocab);
  for (int l = 0; l < L; ++l) {
    const Tensor& t = g.value(out.ac_logits[l]);
    for (int fr = 0; fr < frames; ++fr)
      std::copy(t.row(fr), t.row(fr) + t.cols, f.ac_logits.row(fr * L + l));
  }
  return f;
}

namespace {

Tensor foresight_target(const ExperimentConfig& cfg, const Tensor& teacher) {
  const int total = teacher.rows;
  Tensor target(total - 1, teacher.cols);
  for (int t = 0; t + 1 < total; ++t) {
    const int hi = std::min(t + cfg.backbone.foresight_horizon, total - 1);
    const Real inv = 1.0 / static_cast<Real>(hi - t);
    for (int c = 0; c < teacher.cols; ++c) {
      Real sum = 0.0;
      for (int j = t + 1; j <= hi; ++j) sum += teacher.at(j, c);
      target.at(t, c) = sum * inv;
    }
  }
  return target;
}

}  // namespace

BackboneLossNodes backbone_loss_graph(Graph& g, const ExperimentConfig& cfg,
                                      const BackboneGraphOut& out,
                                      const InterleavedSequence& seq,
                                      const BackboneTargets& targets) {
  const int total = seq.total_frames();
  if (static_cast<int>(targets.semantic.size()) != total)
    throw std::invalid_argument("backbone loss: semantic target length mismatch");
  if (targets.teacher.rows != total || targets.teacher.cols != cfg.corpus.d_sem)
    throw std::invalid_argument("backbone loss: teacher feature shape mismatch");
  if (total < 2) throw std::invalid_argument("backbone loss: need at least 2 frames");

  BackboneLossNodes nodes;
  // Next-semantic-token prediction; the final position has no next token.
  std::vector<int> sem_targets(total, -1);
  for (int t = 0; t + 1 < total; ++t) sem_targets[t] = targets.semantic[t + 1];
  nodes.s_ce = g.ce_mean(out.sem_logits, sem_targets);

  // Acoustic CE over source frames only; every quantizer has the same number
  // of supervised rows, so the average of per-quantizer means is the overall
  // mean over all L codes.
  const int frames = 2 * total;
  const int src_start = 2 * seq.prompt_frames();
  if (seq.source_frames() == 0)
    throw std::invalid_argument("backbone loss: no source frames to supervise");
  if (out.pred_from_frame > src_start)
    throw std::invalid_argument("backbone loss: predictor rows do not cover the source");
  const int pframes = frames - out.pred_from_frame;
  std::vector<int> terms;
  for (int l = 0; l < seq.quantizers; ++l) {
    std::vector<int> ac_targets(pframes, -1);
    for (int i = 0; i < pframes; ++i) {
      const int f = out.pred_from_frame + i;
      if (f >= src_start) ac_targets[i] = seq.ac_code(f, l);
    }
    terms.push_back(g.ce_mean(out.ac_logits[l], ac_targets));
  }
  nodes.a_ce = g.scale(g.add_scalars(terms), 1.0 / seq.quantizers);

  std::vector<int> tf_rows(total - 1);
  for (int t = 0; t + 1 < total; ++t) tf_rows[t] = t;
  nodes.tf = g.mse_mean(g.gather_rows(out.foresight, tf_rows),
                        foresight_target(cfg, targets.teacher));

  nodes.total = g.add_scalars({nodes.s_ce, nodes.a_ce, nodes.tf});
  return nodes;
}

LossReport backbone_loss(const ExperimentConfig& cfg, const ParamStore& ps,
                         const InterleavedSequence& seq, const BackboneTargets& targets,
                         const BackboneRun& run) {
  Graph g(&ps);
  BackboneGraphOut out = backbone_forward_graph(g, cfg, seq, run);
  BackboneLossNodes nodes = backbone_loss_graph(g, cfg, out, seq, targets);
  LossReport report;
  report.l_s_ce = g.scalar(nodes.s_ce);
  report.l_a_ce = g.scalar(nodes.a_ce);
  report.l_tf = g.scalar(nodes.tf);
  report.total = g.scalar(nodes.total);
  return report;
}

std::vector<std::int32_t> predictor_decode(const ExperimentConfig& cfg,
                                           const ParamStore& ps, const Real* cond,
                                           const SamplingSpec& sampling, Rng* rng) {
  const int d = cfg.backbone.lm_hidden;
  const int L = cfg.corpus.num_quantizers;
  const int heads = cfg.backbone.lm_heads;
  const int dh = d / heads;
  const int V = cfg.corpus.codec_vocab;

  Tensor wq = ps.tensor("backbone.pred.layer.attn.wq");
  Tensor wk = ps.tensor("backbone.pred.layer.attn.wk");
  Tensor wv = ps.tensor("backbone.pred.layer.attn.wv");
  Tensor wo = ps.tensor("backbone.pred.layer.attn.wo");
  Tensor w1 = ps.tensor("backbone.pred.layer.mlp.w1");
  Tensor w2 = ps.tensor("backbone.pred.layer.mlp.w2");
  Tensor w3 = ps.tensor("backbone.pred.layer.mlp.w3");
  const Real* g1 = ps.data("backbone.pred.layer.attn_norm.gain");
  const Real* g2 = ps.data("backbone.pred.layer.mlp_norm.gain");
  const Real* gf = ps.data("backbone.pred.final_norm.gain");
  const Real* slotpos = ps.data("backbone.pred.slotpos");
  const Real* start = ps.data("backbone.pred.start");

  Tensor k_cache(L, d), v_cache(L, d);
  std::vector<std::int32_t> codes(L);
  const Real inv_sqrt = 1.0 / std::sqrt(static_cast<Real>(dh));

  for (int l = 0; l < L; ++l) {
    Tensor x(1, d);
    const Real* prev =
        l == 0 ? start
               : ps.data("backbone.embed.ac" + std::to_string(l - 1)) +
                     static_cast<size_t>(codes[l - 1]) * d;
    // Same accumulation order as the training graph: (prev + cond) + slotpos.
    for (int c = 0; c < d; ++c) x.v[c] = (prev[c] + cond[c]) + slotpos[l * d + c];

    Tensor normed(1, d);
    rmsnorm_row(x.row(0), g1, normed.row(0), d);
    Tensor q = matmul(normed, wq);
    Tensor k = matmul(normed, wk);
    Tensor v = matmul(normed, wv);
    std::copy(k.v.begin(), k.v.end(), k_cache.row(l));
    std::copy(v.v.begin(), v.v.end(), v_cache.row(l));

    Tensor ctx(1, d);
    for (int h = 0; h < heads; ++h) {
      std::vector<Real> scores(l + 1);
      for (int j = 0; j <= l; ++j)
        scores[j] = dot(q.row(0) + h * dh, k_cache.row(j) + h * dh, dh) * inv_sqrt;
      softmax_inplace(scores.data(), l + 1);
      for (int j = 0; j <= l; ++j) {
        const Real* vrow = v_cache.row(j) + h * dh;
        for (int c = 0; c < dh; ++c) ctx.v[h * dh + c] += scores[j] * vrow[c];
      }
    }
    Tensor attn_out = matmul(ctx, wo);
    for (int c = 0; c < d; ++c) x.v[c] += attn_out.v[c];

    rmsnorm_row(x.row(0), g2, normed.row(0), d);
    Tensor gate = matmul(normed, w1);
    Tensor up = matmul(normed, w3);
    for (size_t i = 0; i < gate.size(); ++i) gate.v[i] = silu(gate.v[i]) * up.v[i];
    Tensor mlp_out = matmul(gate, w2);
    for (int c = 0; c < d; ++c) x.v[c] += mlp_out.v[c];

    Tensor fin(1, d);
    rmsnorm_row(x.row(0), gf, fin.row(0), d);
    Tensor logits = matmul(fin, ps.tensor("backbone.pred.head" + std::to_string(l)));

    if (sampling.kind == Sampling::Greedy) {
      int best = 0;
      for (int c = 1; c < V; ++c)
        if (logits.v[c] > logits.v[best]) best = c;
      codes[l] = best;
    } else {
      // top-k: softmax over the k largest logits, sample.
      std::vector<int> order(V);
      for (int c = 0; c < V; ++c) order[c] = c;
      std::partial_sort(order.begin(), order.begin() + sampling.top_k, order.end(),
                        [&](int a, int b) { return logits.v[a] > logits.v[b]; });
      std::vector<double> w(sampling.top_k);
      for (int i = 0; i < sampling.top_k; ++i) w[i] = logits.v[order[i]];
      const double mx = *std::max_element(w.begin(), w.end());
      for (auto& x2 : w) x2 = std::exp(x2 - mx);
      codes[l] = order[rng->categorical(w.data(), sampling.top_k)];
    }
  }
  return codes;
}

AcousticTokens backbone_generate(const ExperimentConfig& cfg, const ParamStore& ps,
                                 const SemSide& prompt_sem, const AcousticTokens& prompt_ac,
                                 const SemSide& source_sem, const BackboneRun& run,
                                 const SamplingSpec& sampling) {
  InterleavedSequence seq =
      build_sequence(cfg, prompt_sem, prompt_ac, source_sem, AcousticTokens());
  const int p_frames = seq.prompt_frames();
  const int s_frames = seq.source_frames();
  const int L = seq.quantizers;
  Rng rng(sampling.seed);

  AcousticTokens out(2 * s_frames, L);
  for (int t = 0; t < s_frames; ++t) {
    for (int r = 0; r < 2; ++r) {
      const int f = 2 * (p_frames + t) + r;
      const int limit = InterleavedSequence::ac_position(f);
      Graph g(&ps);
      BackboneGraphOut fwd =
          backbone_forward_graph(g, cfg, seq, run, limit, /*with_heads=*/false);
      const Tensor& hidden = g.value(fwd.hidden);
      std::vector<std::int32_t> codes =
          predictor_decode(cfg, ps, hidden.row(hidden.rows - 1), sampling, &rng);
      for (int l = 0; l < L; ++l) {
        seq.set_ac_code(f, l, codes[l]);
        out.at(2 * t + r, l) = codes[l];
      }
    }
  }
  return out;
}

void merge_lora_into_base(ParamStore& ps, const ExperimentConfig& cfg, bool second) {
  const std::string suffix = second ? "lora2" : "lora";
  const Real scale = cfg.lora.alpha / cfg.lora.rank;
  for (int i = 0; i < cfg.backbone.lm_layers; ++i) {
    for (const char* w : {"wq", "wk", "wv"}) {
      const std::string base =
          "backbone.layer" + std::to_string(i) + ".attn." + w;
      if (!ps.has(base + "." + suffix + "_a")) continue;
      Tensor a = ps.tensor(base + "." + suffix + "_a");
      Tensor b = ps.tensor(base + "." + suffix + "_b");
      Tensor delta = matmul(a, b);
      Tensor wt = ps.tensor(base);
      for (size_t j = 0; j < wt.size(); ++j) wt.v[j] += scale * delta.v[j];
      ps.set_tensor(base, wt);
    }
  }
}

long backbone_lora_param_count(const ExperimentConfig& cfg) {
  return 3L * cfg.backbone.lm_layers * 2L * cfg.backbone.lm_hidden * cfg.lora.rank;
}

long encoder_lora_param_count(const ExperimentConfig& cfg) {
  return 3L * cfg.encoder.num_layers * 2L * cfg.encoder.hidden_dim * cfg.lora.rank;
}

long encoder_final_linear_param_count(const ExperimentConfig& cfg) {
  return static_cast<long>(cfg.encoder.hidden_dim) * cfg.corpus.semantic_vocab;
}

}  // namespace svc
