#include "svc/encoder.hpp"

#include <stdexcept>

#include "transformer_util.hpp"

namespace svc {

void register_encoder_params(ParamStore& ps, const ExperimentConfig& cfg) {
  const int d = cfg.encoder.hidden_dim;
  for (int l = 0; l < cfg.corpus.num_quantizers; ++l)
    ps.add("encoder.embed.ac" + std::to_string(l), "encoder", cfg.corpus.codec_vocab, d);
  ps.add("encoder.embed.pos", "encoder", cfg.encoder.max_positions, d);
  for (int i = 0; i < cfg.encoder.num_layers; ++i)
    register_transformer_layer(ps, "encoder.layer" + std::to_string(i), "encoder", d,
                               cfg.encoder.intermediate_dim);
  for (int i = 0; i + 1 < cfg.encoder.num_layers; ++i)
    ps.add("encoder.proj" + std::to_string(i), "encoder", d, cfg.corpus.d_sem);
  ps.add("encoder.final_norm.gain", "encoder", 1, d);
  // The trailing projection producing logits; fine-tuned end to end, hence
  // its own checkpoint group.
  ps.add("encoder.head.logits", "linear", d, cfg.corpus.semantic_vocab);
}

void register_encoder_dual_params(ParamStore& ps, const ExperimentConfig& cfg) {
  const int d = cfg.encoder.hidden_dim;
  for (int i = 0; i < cfg.encoder.num_layers; ++i)
    register_layer_lora(ps, "encoder.layer" + std::to_string(i), "encoder-lora",
                        "lora", d, cfg.lora.rank);
  ps.add("encoder.head.logits2", "linear2", d, cfg.corpus.semantic_vocab);
}

EncoderGraphOut encoder_graph(Graph& g, const ExperimentConfig& cfg,
                              const AcousticTokens& a, const EncoderRun& run) {
  if (a.quantizers != cfg.corpus.num_quantizers)
    throw std::invalid_argument("encode: quantizer count mismatch");
  if (a.frames < 2) throw std::invalid_argument("encode: need at least 2 acoustic frames");
  if (a.frames % 2 != 0) throw std::invalid_argument("encode: frame count must be even");
  for (const auto code : a.codes)
    if (code < 0 || code >= cfg.corpus.codec_vocab)
      throw std::invalid_argument("encode: code out of vocab range");
  const int sem_rows = a.frames / 2;
  if (sem_rows > cfg.encoder.max_positions)
    throw std::invalid_argument("encode: sequence exceeds max_positions");

  // Sum of per-quantizer embeddings, then 2:1 mean pooling.
  int x = -1;
  for (int l = 0; l < a.quantizers; ++l) {
    std::vector<int> idx(a.frames);
    for (int f = 0; f < a.frames; ++f) idx[f] = a.at(f, l);
    int e = g.gather_param_rows("encoder.embed.ac" + std::to_string(l), idx);
    x = l == 0 ? e : g.add(x, e);
  }
  x = g.mean_pool2_rows(x);

  std::vector<int> pos_idx(sem_rows);
  for (int t = 0; t < sem_rows; ++t) pos_idx[t] = t;
  x = g.add(x, g.gather_param_rows("encoder.embed.pos", pos_idx));

  const AttnMask mask =
      run.mode == AttentionMode::Causal ? AttnMask::Causal : AttnMask::Full;
  LoraSpec lora{"lora", cfg.lora.rank, cfg.lora.alpha};

  EncoderGraphOut out;
  out.rows = sem_rows;
  for (int i = 0; i < cfg.encoder.num_layers; ++i) {
    x = transformer_layer(g, x, "encoder.layer" + std::to_string(i),
                          cfg.encoder.num_heads, mask, 0,
                          run.use_lora ? &lora : nullptr);
    if (i + 1 < cfg.encoder.num_layers)
      out.intermediate.push_back(
          g.matmul(x, g.param("encoder.proj" + std::to_string(i))));
  }
  out.states = g.rmsnorm(x, g.param("encoder.final_norm.gain"));
  out.logits = g.matmul(out.states, g.param(run.second_linear
                                                ? "encoder.head.logits2"
                                                : "encoder.head.logits"));
  return out;
}

SemanticHidden encode(const ExperimentConfig& cfg, const ParamStore& ps,
                      const AcousticTokens& a, const EncoderRun& run) {
  Graph g(&ps);
  EncoderGraphOut out = encoder_graph(g, cfg, a, run);
  SemanticHidden h;
  h.states = g.value(out.states);
  h.logits = g.value(out.logits);
  for (int node : out.intermediate) h.intermediate_states.push_back(g.value(node));
  h.delay_steps = run.mode == AttentionMode::Causal ? cfg.encoder.delay_steps : 0;
  return h;
}

namespace {

// Shifted CE targets: raw row j predicts symbol j - shift. Rows without a
// symbol get -1 (ignored).
std::vector<int> shifted_targets(int rows, int shift, const std::vector<std::int32_t>& codes) {
  std::vector<int> targets(rows, -1);
  for (int j = 0; j < rows; ++j) {
    const int t = j - shift;
    if (t >= 0 && t < static_cast<int>(codes.size())) targets[j] = codes[t];
  }
  return targets;
}

}  // namespace

LossReport encoder_loss(const SemanticHidden& h, const SemanticTokens& s,
                        const ContinuousSemantic& c) {
  const int rows = h.logits.rows;
  const int len = static_cast<int>(s.codes.size());
  if (c.features.rows != len)
    throw std::invalid_argument("encoder_loss: continuous/semantic length mismatch");
  const int shift = h.delay_steps / 2;
  if (rows < len || rows > len + shift)
    throw std::invalid_argument("encoder_loss: hidden rows do not match target length");

  LossReport report;
  int count = 0;
  for (int j = 0; j < rows; ++j) {
    const int t = j - shift;
    if (t < 0 || t >= len) continue;
    std::vector<Real> row(h.logits.row(j), h.logits.row(j) + h.logits.cols);
    softmax_inplace(row.data(), h.logits.cols);
    report.l_s_ce -= std::log(std::max(row[s.codes[t]], Real(1e-300)));
    ++count;
  }
  if (count == 0) throw std::invalid_argument("encoder_loss: no supervised rows");
  report.l_s_ce /= count;

  if (!h.intermediate_states.empty()) {
    double mse_sum = 0.0;
    for (const auto& proj : h.intermediate_states) {
      double layer_sum = 0.0;
      long n = 0;
      for (int j = 0; j < proj.rows; ++j) {
        const int t = j - shift;
        if (t < 0 || t >= len) continue;
        for (int cc = 0; cc < proj.cols; ++cc) {
          const double d = proj.at(j, cc) - c.features.at(t, cc);
          layer_sum += d * d;
          ++n;
        }
      }
      mse_sum += layer_sum / static_cast<double>(n);
    }
    report.l_s_mse = mse_sum / static_cast<double>(h.intermediate_states.size());
  }
  report.total = report.l_s_ce + report.l_s_mse;
  return report;
}

EncoderLossNodes encoder_loss_graph(Graph& g, const ExperimentConfig& cfg,
                                    const EncoderGraphOut& out, const SemanticTokens& s,
                                    const ContinuousSemantic& c, int delay_steps) {
  (void)cfg;
  const int shift = delay_steps / 2;
  const int rows = out.rows;
  const int len = static_cast<int>(s.codes.size());
  if (c.features.rows != len)
    throw std::invalid_argument("encoder_loss: continuous/semantic length mismatch");
  if (rows < len || rows > len + shift)
    throw std::invalid_argument("encoder_loss: hidden rows do not match target length");

  EncoderLossNodes nodes;
  nodes.ce = g.ce_mean(out.logits, shifted_targets(rows, shift, s.codes));

  if (!out.intermediate.empty()) {
    // Supervised rows only: raw row j carries the symbol at step j - shift.
    std::vector<int> sup_idx;
    for (int j = shift; j < rows && j - shift < len; ++j) sup_idx.push_back(j);
    Tensor target(static_cast<int>(sup_idx.size()), c.features.cols);
    for (size_t i = 0; i < sup_idx.size(); ++i)
      std::copy(c.features.row(sup_idx[i] - shift),
                c.features.row(sup_idx[i] - shift) + c.features.cols,
                target.row(static_cast<int>(i)));
    std::vector<int> terms;
    for (int node : out.intermediate)
      terms.push_back(g.mse_mean(g.gather_rows(node, sup_idx), target));
    int mse = g.add_scalars(terms);
    nodes.mse = g.scale(mse, 1.0 / static_cast<double>(terms.size()));
    nodes.total = g.add_scalars({nodes.ce, nodes.mse});
  } else {
    nodes.mse = -1;
    nodes.total = nodes.ce;
  }
  return nodes;
}

AcousticTokens pad_for_delay(const AcousticTokens& a, int delay_steps) {
  if (delay_steps == 0 || a.frames == 0) return a;
  AcousticTokens out(a.frames + delay_steps, a.quantizers);
  std::copy(a.codes.begin(), a.codes.end(), out.codes.begin());
  for (int f = a.frames; f < out.frames; ++f)
    for (int l = 0; l < a.quantizers; ++l) out.at(f, l) = a.at(a.frames - 1, l);
  return out;
}

DelayedEncoding encode_delayed(const ExperimentConfig& cfg, const ParamStore& ps,
                               const AcousticTokens& a, const EncoderRun& run) {
  const int delay = run.mode == AttentionMode::Causal ? cfg.encoder.delay_steps : 0;
  const int shift = delay / 2;
  SemanticHidden h = encode(cfg, ps, pad_for_delay(a, delay), run);
  const int steps = a.frames / 2;
  DelayedEncoding d;
  d.states = Tensor(steps, h.states.cols);
  d.logits = Tensor(steps, h.logits.cols);
  for (int t = 0; t < steps; ++t) {
    std::copy(h.states.row(t + shift), h.states.row(t + shift) + h.states.cols,
              d.states.row(t));
    std::copy(h.logits.row(t + shift), h.logits.row(t + shift) + h.logits.cols,
              d.logits.row(t));
  }
  return d;
}

double encoder_semantic_accuracy(const ExperimentConfig& cfg, const ParamStore& ps,
                                 const std::vector<const Utterance*>& utts,
                                 const EncoderRun& run) {
  long correct = 0, total = 0;
  for (const Utterance* u : utts) {
    DelayedEncoding d = encode_delayed(cfg, ps, u->acoustic_tokens, run);
    for (int t = 0; t < d.logits.rows; ++t) {
      int best = 0;
      for (int cc = 1; cc < d.logits.cols; ++cc)
        if (d.logits.at(t, cc) > d.logits.at(t, best)) best = cc;
      if (best == u->semantic_tokens.codes[t]) ++correct;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / total;
}

}  // namespace svc
