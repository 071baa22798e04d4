#include "svc/trainer.hpp"

#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace svc {

void TrainPlan::validate() const {
  if (self_refine_prob < 0.0 || self_refine_prob > 1.0)
    throw std::invalid_argument("plan: self_refine_prob must be in [0, 1]");
  if (self_refine_prob > 0.0 && stage != Stage::Finetune)
    throw std::invalid_argument("plan: only the fine-tune stage may set self_refine_prob > 0");
  if (steps < 0) throw std::invalid_argument("plan: steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("plan: batch_size must be >= 1");
  if (decay_period < 1) throw std::invalid_argument("plan: decay_period must be >= 1");
}

void register_model(ParamStore& ps, const ExperimentConfig& cfg, bool with_dual) {
  register_backbone_params(ps, cfg);
  register_encoder_params(ps, cfg);
  register_connector_params(ps, cfg, /*second=*/false);
  register_backbone_lora_params(ps, cfg, /*second=*/false);
  if (with_dual) {
    register_encoder_dual_params(ps, cfg);
    register_connector_params(ps, cfg, /*second=*/true);
    register_backbone_lora_params(ps, cfg, /*second=*/true);
  }
}

void init_model(ParamStore& ps, const ExperimentConfig& cfg) {
  ps.init(cfg.train.seed);
}

std::vector<int> train_pool(const CorpusConfig& cfg, const std::vector<Utterance>& corpus) {
  std::vector<int> pool;
  for (int i = 0; i < static_cast<int>(corpus.size()); ++i)
    if (corpus[i].speaker.speaker_id < cfg.train_speakers && !is_heldout_utterance(cfg, i))
      pool.push_back(i);
  return pool;
}

std::vector<int> heldout_pool(const CorpusConfig& cfg, const std::vector<Utterance>& corpus) {
  std::vector<int> pool;
  for (int i = 0; i < static_cast<int>(corpus.size()); ++i)
    if (corpus[i].speaker.speaker_id < cfg.train_speakers && is_heldout_utterance(cfg, i))
      pool.push_back(i);
  return pool;
}

TrainPlan plan_for(const ExperimentConfig& cfg, Stage stage) {
  TrainPlan plan;
  plan.stage = stage;
  plan.seed = cfg.train.seed;
  plan.batch_size = cfg.train.batch_size;
  switch (stage) {
    case Stage::PretrainBackbone:
    case Stage::PretrainEncoder:
      plan.steps = cfg.train.pretrain_steps;
      plan.learning_rate = cfg.train.lr_pretrain;
      plan.decay_rate = cfg.train.decay_rate;
      plan.decay_period = cfg.train.decay_period_pretrain;
      break;
    case Stage::Finetune:
      plan.steps = cfg.train.finetune_steps;
      plan.learning_rate = cfg.train.lr_finetune;
      plan.decay_rate = cfg.train.decay_rate;
      plan.decay_period = cfg.train.decay_period_finetune;
      plan.self_refine_prob = cfg.train.self_refine_prob;
      break;
    case Stage::DualEncoder:
      plan.steps = cfg.train.dual_encoder_steps;
      plan.learning_rate = cfg.train.lr_pretrain;
      plan.decay_rate = cfg.train.decay_rate;
      plan.decay_period = cfg.train.decay_period_pretrain;
      break;
    case Stage::DualFinetune:
      plan.steps = cfg.train.dual_finetune_steps;
      plan.learning_rate = cfg.train.lr_finetune;
      plan.decay_rate = cfg.train.decay_rate;
      plan.decay_period = cfg.train.decay_period_finetune;
      break;
  }
  return plan;
}

namespace {

// Decoupled weight decay; bias-corrected moments over the full flat vector,
// updates restricted to the trainable mask.
class AdamW {
 public:
  explicit AdamW(size_t n) : m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<Real>& params, const std::vector<Real>& grad,
            const std::vector<std::uint8_t>& mask, double lr, double weight_decay) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params.size(); ++i) {
      if (!mask[i]) continue;
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      params[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * params[i]);
    }
  }

 private:
  static constexpr double beta1_ = 0.9;
  static constexpr double beta2_ = 0.999;
  static constexpr double eps_ = 1e-8;
  std::vector<Real> m_, v_;
  int t_ = 0;
};

using Job = std::function<LossReport(std::vector<Real>& grad)>;

// Sequentially samples jobs, runs them in parallel, reduces gradients in item
// order, applies AdamW. Deterministic for a fixed (plan, store, sampler).
LossReport run_training(ParamStore& store, const ExperimentConfig& cfg,
                        const TrainPlan& plan,
                        const std::vector<std::string>& trainable_groups,
                        const std::function<Job(Rng&)>& sample_job,
                        const MetricsSink& sink) {
  plan.validate();
  const std::vector<std::uint8_t> mask = store.group_mask(trainable_groups);
  AdamW opt(store.total());
  Rng rng(splitmix64(plan.seed) ^ fnv1a("train-loop"));
  std::vector<Real> grad(store.total());
  LossReport last;

  for (int step = 0; step < plan.steps; ++step) {
    const double lr =
        plan.learning_rate * std::pow(plan.decay_rate, step / plan.decay_period);
    std::vector<Job> jobs;
    jobs.reserve(plan.batch_size);
    for (int b = 0; b < plan.batch_size; ++b) jobs.push_back(sample_job(rng));

    std::vector<std::vector<Real>> item_grads(plan.batch_size);
    std::vector<LossReport> item_losses(plan.batch_size);
#pragma omp parallel for schedule(dynamic)
    for (int b = 0; b < plan.batch_size; ++b) {
      item_grads[b].assign(store.total(), 0.0);
      item_losses[b] = jobs[b](item_grads[b]);
    }

    std::fill(grad.begin(), grad.end(), 0.0);
    const Real inv_batch = 1.0 / plan.batch_size;
    for (int b = 0; b < plan.batch_size; ++b)
      for (size_t i = 0; i < grad.size(); ++i) grad[i] += item_grads[b][i] * inv_batch;

    LossReport mean;
    for (int b = 0; b < plan.batch_size; ++b) {
      mean.l_s_ce += item_losses[b].l_s_ce * inv_batch;
      mean.l_a_ce += item_losses[b].l_a_ce * inv_batch;
      mean.l_tf += item_losses[b].l_tf * inv_batch;
      mean.l_s_mse += item_losses[b].l_s_mse * inv_batch;
    }
    mean.total = mean.l_s_ce + mean.l_a_ce + mean.l_tf + mean.l_s_mse;

    opt.step(store.flat(), grad, mask, lr, cfg.train.weight_decay);
    if (sink) sink(TrainLogEntry{step, mean, lr});
    last = mean;
  }
  return last;
}

AcousticTokens slice_frames(const AcousticTokens& a, int f0, int f1) {
  AcousticTokens out(f1 - f0, a.quantizers);
  for (int f = f0; f < f1; ++f)
    for (int l = 0; l < a.quantizers; ++l) out.at(f - f0, l) = a.at(f, l);
  return out;
}

struct SplitDraw {
  int split = 0;
  bool masked = false;
  int mask_start = 0;
  int mask_len = 0;
};

SplitDraw draw_split_and_mask(const ExperimentConfig& cfg, int sem_frames, Rng& rng) {
  SplitDraw d;
  d.split = rng.uniform_int(cfg.train.min_prompt_frames,
                            sem_frames - cfg.train.min_source_frames);
  if (cfg.backbone.mask_prob > 0.0 && rng.uniform() < cfg.backbone.mask_prob) {
    const int span = std::max(
        1, static_cast<int>(std::lround(cfg.backbone.mask_span_frac * sem_frames)));
    d.masked = true;
    d.mask_len = rng.uniform_int(1, span);
    d.mask_start = rng.uniform_int(0, sem_frames - d.mask_len);
  }
  return d;
}

BackboneTargets targets_for(const Utterance& v) {
  BackboneTargets t;
  t.semantic = v.semantic_tokens.codes;
  t.teacher = v.continuous_semantic.features;
  return t;
}

}  // namespace

LossReport pretrain_backbone(ParamStore& ps, const ExperimentConfig& cfg,
                             const std::vector<Utterance>& corpus, const TrainPlan& plan,
                             const MetricsSink& sink) {
  if (plan.stage != Stage::PretrainBackbone)
    throw std::invalid_argument("pretrain_backbone: wrong stage in plan");
  const std::vector<int> pool = train_pool(cfg.corpus, corpus);
  if (pool.empty()) throw std::invalid_argument("pretrain_backbone: empty training pool");

  auto sample_job = [&](Rng& rng) -> Job {
    const Utterance* u = &corpus[pool[rng.uniform_int(0, (int)pool.size() - 1)]];
    const SplitDraw d = draw_split_and_mask(cfg, u->sem_frames(), rng);
    return [&cfg, &ps, u, d](std::vector<Real>& grad) {
      const int p = d.split;
      const int tp = u->sem_frames();
      InterleavedSequence seq = build_sequence(
          cfg,
          SemSide::discrete({u->semantic_tokens.codes.begin(),
                             u->semantic_tokens.codes.begin() + p}),
          slice_frames(u->acoustic_tokens, 0, 2 * p),
          SemSide::discrete({u->semantic_tokens.codes.begin() + p,
                             u->semantic_tokens.codes.end()}),
          slice_frames(u->acoustic_tokens, 2 * p, 2 * tp));
      if (d.masked)
        for (int t = d.mask_start; t < d.mask_start + d.mask_len; ++t)
          seq.sem_masked[t] = 1;
      Graph g(&ps, &grad);
      BackboneGraphOut out = backbone_forward_graph(g, cfg, seq, BackboneRun{}, -1,
                                                    true, nullptr, 2 * p);
      BackboneLossNodes nodes = backbone_loss_graph(g, cfg, out, seq, targets_for(*u));
      g.backward(nodes.total);
      LossReport r;
      r.l_s_ce = g.scalar(nodes.s_ce);
      r.l_a_ce = g.scalar(nodes.a_ce);
      r.l_tf = g.scalar(nodes.tf);
      r.total = g.scalar(nodes.total);
      return r;
    };
  };
  return run_training(ps, cfg, plan, {"backbone"}, sample_job, sink);
}

LossReport pretrain_encoder(ParamStore& ps, const ExperimentConfig& cfg,
                            const std::vector<Utterance>& corpus, const TrainPlan& plan,
                            const MetricsSink& sink) {
  if (plan.stage != Stage::PretrainEncoder)
    throw std::invalid_argument("pretrain_encoder: wrong stage in plan");
  const std::vector<int> pool = train_pool(cfg.corpus, corpus);
  if (pool.empty()) throw std::invalid_argument("pretrain_encoder: empty training pool");

  auto sample_job = [&](Rng& rng) -> Job {
    const Utterance* u = &corpus[pool[rng.uniform_int(0, (int)pool.size() - 1)]];
    return [&cfg, &ps, u](std::vector<Real>& grad) {
      Graph g(&ps, &grad);
      EncoderGraphOut out = encoder_graph(
          g, cfg, pad_for_delay(u->acoustic_tokens, cfg.encoder.delay_steps));
      EncoderLossNodes nodes =
          encoder_loss_graph(g, cfg, out, u->semantic_tokens, u->continuous_semantic,
                             cfg.encoder.delay_steps);
      g.backward(nodes.total);
      LossReport r;
      r.l_s_ce = g.scalar(nodes.ce);
      r.l_s_mse = nodes.mse >= 0 ? g.scalar(nodes.mse) : 0.0;
      r.total = g.scalar(nodes.total);
      return r;
    };
  };
  return run_training(ps, cfg, plan, {"encoder", "linear"}, sample_job, sink);
}

std::vector<RefinementPair> build_refinement_pairs(const ExperimentConfig& cfg,
                                                   const ParamStore& ps,
                                                   const std::vector<Utterance>& corpus,
                                                   int count, std::uint64_t seed) {
  const std::vector<int> pool = train_pool(cfg.corpus, corpus);
  if (pool.empty()) throw std::invalid_argument("build_refinement_pairs: empty pool");
  std::vector<std::vector<int>> by_speaker(cfg.corpus.train_speakers);
  for (int idx : pool) by_speaker[corpus[idx].speaker.speaker_id].push_back(idx);

  struct Draw {
    int source_idx;
    int target_speaker;
    int prompt_idx;
  };
  Rng rng(splitmix64(seed) ^ fnv1a("refine-pairs"));
  std::vector<Draw> draws;
  draws.reserve(count);
  for (int i = 0; i < count; ++i) {
    Draw d;
    d.source_idx = pool[rng.uniform_int(0, (int)pool.size() - 1)];
    const int src_speaker = corpus[d.source_idx].speaker.speaker_id;
    do {
      d.target_speaker = rng.uniform_int(0, cfg.corpus.train_speakers - 1);
    } while (d.target_speaker == src_speaker || by_speaker[d.target_speaker].empty());
    const auto& cands = by_speaker[d.target_speaker];
    d.prompt_idx = cands[rng.uniform_int(0, (int)cands.size() - 1)];
    draws.push_back(d);
  }

  std::vector<RefinementPair> pairs(count);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    const Draw& d = draws[i];
    const Utterance& src = corpus[d.source_idx];
    const Utterance& prompt = corpus[d.prompt_idx];
    const int p = std::min(cfg.stream.prompt_frames, prompt.sem_frames());
    AcousticTokens converted = backbone_generate(
        cfg, ps,
        SemSide::discrete(
            {prompt.semantic_tokens.codes.begin(), prompt.semantic_tokens.codes.begin() + p}),
        slice_frames(prompt.acoustic_tokens, 0, 2 * p),
        SemSide::discrete(src.semantic_tokens.codes), BackboneRun{});
    RefinementPair pair;
    pair.source_index = d.source_idx;
    pair.target_speaker = d.target_speaker;
    pair.synthetic.content = src.content;
    pair.synthetic.speaker = SpeakerProfile::from_id(d.target_speaker, cfg.corpus);
    pair.synthetic.semantic_tokens = src.semantic_tokens;
    pair.synthetic.continuous_semantic = src.continuous_semantic;
    pair.synthetic.acoustic_tokens = std::move(converted);
    pairs[i] = std::move(pair);
  }
  return pairs;
}

namespace {

// Builds the end-to-end graph for one fine-tuning item: encoder (delayed,
// padded) -> connector rows for both sections -> backbone with overrides.
LossReport e2e_item(const ExperimentConfig& cfg, ParamStore& ps, std::vector<Real>& grad,
                    const Utterance& S, const Utterance& V, const SplitDraw& d,
                    bool nonstream_set, bool backbone_lora = true) {
  const int tp = V.sem_frames();
  const int p = d.split;
  const int delay = nonstream_set ? 0 : cfg.encoder.delay_steps;
  const int shift = delay / 2;
  EncoderRun erun;
  erun.mode = nonstream_set ? AttentionMode::Bidirectional : AttentionMode::Causal;
  erun.use_lora = nonstream_set;
  erun.second_linear = nonstream_set;
  ConnectorRun crun;
  crun.second = nonstream_set;
  BackboneRun brun;
  brun.use_lora = backbone_lora;
  brun.second_lora = nonstream_set;

  Graph g(&ps, &grad);

  const AcousticTokens prompt_ac = slice_frames(V.acoustic_tokens, 0, 2 * p);
  EncoderGraphOut enc_p = encoder_graph(g, cfg, pad_for_delay(prompt_ac, delay), erun);
  std::vector<int> prompt_idx(p);
  for (int t = 0; t < p; ++t) prompt_idx[t] = t + shift;
  int prompt_rows = connector_graph(g, cfg, g.gather_rows(enc_p.states, prompt_idx),
                                    g.gather_rows(enc_p.logits, prompt_idx), crun);

  EncoderGraphOut enc_s =
      encoder_graph(g, cfg, pad_for_delay(S.acoustic_tokens, delay), erun);
  std::vector<int> source_idx(tp - p);
  for (int t = p; t < tp; ++t) source_idx[t - p] = t + shift;
  int source_rows = connector_graph(g, cfg, g.gather_rows(enc_s.states, source_idx),
                                    g.gather_rows(enc_s.logits, source_idx), crun);

  InterleavedSequence seq = build_sequence(
      cfg, SemSide::embedded(g.value(prompt_rows)), prompt_ac,
      SemSide::embedded(g.value(source_rows)),
      slice_frames(V.acoustic_tokens, 2 * p, 2 * tp));
  if (d.masked)
    for (int t = d.mask_start; t < d.mask_start + d.mask_len; ++t) seq.sem_masked[t] = 1;

  SequenceNodes overrides{prompt_rows, source_rows};
  BackboneGraphOut out =
      backbone_forward_graph(g, cfg, seq, brun, -1, true, &overrides, 2 * p);
  BackboneLossNodes nodes = backbone_loss_graph(g, cfg, out, seq, targets_for(V));
  g.backward(nodes.total);
  LossReport r;
  r.l_s_ce = g.scalar(nodes.s_ce);
  r.l_a_ce = g.scalar(nodes.a_ce);
  r.l_tf = g.scalar(nodes.tf);
  r.total = g.scalar(nodes.total);
  return r;
}

}  // namespace

LossReport finetune(ParamStore& ps, const ExperimentConfig& cfg,
                    const std::vector<Utterance>& corpus,
                    const std::vector<RefinementPair>& pairs, const TrainPlan& plan,
                    const MetricsSink& sink, FinetuneVariant variant) {
  if (plan.stage != Stage::Finetune)
    throw std::invalid_argument("finetune: wrong stage in plan");
  const std::vector<int> pool = train_pool(cfg.corpus, corpus);
  if (pool.empty()) throw std::invalid_argument("finetune: empty training pool");
  std::map<int, const RefinementPair*> pair_of;
  for (const auto& pr : pairs) pair_of.emplace(pr.source_index, &pr);

  std::vector<std::string> trainable;
  switch (variant) {
    case FinetuneVariant::Lora:
      trainable = {"connector", "backbone-lora", "linear"};
      break;
    case FinetuneVariant::FrozenBackbone:
      trainable = {"connector", "linear"};
      break;
    case FinetuneVariant::FullBackbone:
      trainable = {"connector", "backbone", "linear"};
      break;
  }
  const bool lora_active = variant == FinetuneVariant::Lora;

  auto sample_job = [&, lora_active](Rng& rng) -> Job {
    const int idx = pool[rng.uniform_int(0, (int)pool.size() - 1)];
    const Utterance* u = &corpus[idx];
    const Utterance* S = u;
    const Utterance* V = u;
    auto it = pair_of.find(idx);
    if (it != pair_of.end() && plan.self_refine_prob > 0.0 &&
        rng.uniform() < plan.self_refine_prob) {
      if (rng.uniform() < 0.5)
        S = &it->second->synthetic;  // conversion behavior: synthetic source
      else
        V = &it->second->synthetic;  // conversion behavior: synthetic target
    }
    const SplitDraw d = draw_split_and_mask(cfg, u->sem_frames(), rng);
    return [&cfg, &ps, S, V, d, lora_active](std::vector<Real>& grad) {
      return e2e_item(cfg, ps, grad, *S, *V, d, /*nonstream_set=*/false,
                      /*backbone_lora=*/lora_active);
    };
  };
  return run_training(ps, cfg, plan, trainable, sample_job, sink);
}

void extend_dual_mode(ParamStore& ps, const ExperimentConfig& cfg,
                      const std::vector<Utterance>& corpus, const MetricsSink& sink) {
  if (!ps.has("encoder.head.logits2"))
    throw std::invalid_argument(
        "extend_dual_mode: dual parameter groups are not registered");
  const std::vector<int> pool = train_pool(cfg.corpus, corpus);
  if (pool.empty()) throw std::invalid_argument("extend_dual_mode: empty training pool");

  {  // Phase 1: bidirectional semantic extraction via adapters.
    TrainPlan plan = plan_for(cfg, Stage::DualEncoder);
    auto sample_job = [&](Rng& rng) -> Job {
      const Utterance* u = &corpus[pool[rng.uniform_int(0, (int)pool.size() - 1)]];
      return [&cfg, &ps, u](std::vector<Real>& grad) {
        Graph g(&ps, &grad);
        EncoderRun erun;
        erun.mode = AttentionMode::Bidirectional;
        erun.use_lora = true;
        erun.second_linear = true;
        EncoderGraphOut out = encoder_graph(g, cfg, u->acoustic_tokens, erun);
        EncoderLossNodes nodes = encoder_loss_graph(g, cfg, out, u->semantic_tokens,
                                                    u->continuous_semantic, 0);
        g.backward(nodes.total);
        LossReport r;
        r.l_s_ce = g.scalar(nodes.ce);
        r.l_s_mse = nodes.mse >= 0 ? g.scalar(nodes.mse) : 0.0;
        r.total = g.scalar(nodes.total);
        return r;
      };
    };
    run_training(ps, cfg, plan, {"encoder-lora", "linear2"}, sample_job, sink);
  }
  {  // Phase 2: non-streaming connector + backbone adapters, end to end.
    TrainPlan plan = plan_for(cfg, Stage::DualFinetune);
    auto sample_job = [&](Rng& rng) -> Job {
      const Utterance* u = &corpus[pool[rng.uniform_int(0, (int)pool.size() - 1)]];
      const SplitDraw d = draw_split_and_mask(cfg, u->sem_frames(), rng);
      return [&cfg, &ps, u, d](std::vector<Real>& grad) {
        return e2e_item(cfg, ps, grad, *u, *u, d, /*nonstream_set=*/true);
      };
    };
    run_training(ps, cfg, plan, {"connector2", "backbone-lora2", "linear2"}, sample_job,
                 sink);
  }
}

std::map<std::string, std::uint64_t> group_hashes(const ParamStore& ps) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& g : ps.groups()) out[g] = ps.group_hash(g);
  return out;
}

long trainable_param_count(const ParamStore& ps, const ExperimentConfig& cfg,
                           Stage stage, FinetuneVariant variant) {
  (void)cfg;
  std::vector<std::string> groups;
  switch (stage) {
    case Stage::PretrainBackbone: groups = {"backbone"}; break;
    case Stage::PretrainEncoder: groups = {"encoder", "linear"}; break;
    case Stage::Finetune:
      switch (variant) {
        case FinetuneVariant::Lora: groups = {"connector", "backbone-lora", "linear"}; break;
        case FinetuneVariant::FrozenBackbone: groups = {"connector", "linear"}; break;
        case FinetuneVariant::FullBackbone: groups = {"connector", "backbone", "linear"}; break;
      }
      break;
    case Stage::DualEncoder: groups = {"encoder-lora", "linear2"}; break;
    case Stage::DualFinetune: groups = {"connector2", "backbone-lora2", "linear2"}; break;
  }
  long n = 0;
  for (const auto& g : groups) n += static_cast<long>(ps.group_size(g));
  return n;
}

ConnectorOutput semantic_stream(const ExperimentConfig& cfg, const ParamStore& ps,
                                const AcousticTokens& a, bool nonstream) {
  if (nonstream) {
    EncoderRun erun;
    erun.mode = AttentionMode::Bidirectional;
    erun.use_lora = true;
    erun.second_linear = true;
    SemanticHidden h = encode(cfg, ps, a, erun);
    ConnectorRun crun;
    crun.second = true;
    return connect(cfg, ps, h, crun);
  }
  DelayedEncoding d = encode_delayed(cfg, ps, a);
  return connect(cfg, ps, d.states, d.logits);
}

}  // namespace svc
