#include "svc/evaluate.hpp"

#include <json.hpp>

#include "svc/backbone.hpp"
#include "svc/rng.hpp"
#include "svc/trainer.hpp"

namespace svc {

std::vector<EvalPair> make_eval_pairs(const ExperimentConfig& cfg,
                                      const std::vector<Utterance>& corpus, int count,
                                      std::uint64_t seed, bool identity) {
  std::vector<int> test_utts;
  for (int i = 0; i < static_cast<int>(corpus.size()); ++i)
    if (corpus[i].speaker.speaker_id >= cfg.corpus.train_speakers) test_utts.push_back(i);
  if (test_utts.size() < 2)
    throw ProtocolError("make_eval_pairs: not enough held-out speaker utterances");

  Rng rng(splitmix64(seed) ^ fnv1a("eval-pairs"));
  std::vector<EvalPair> pairs;
  pairs.reserve(count);
  for (int i = 0; i < count; ++i) {
    EvalPair p;
    p.source_utt = test_utts[rng.uniform_int(0, (int)test_utts.size() - 1)];
    if (identity) {
      p.target_utt = p.source_utt;
    } else {
      do {
        p.target_utt = test_utts[rng.uniform_int(0, (int)test_utts.size() - 1)];
      } while (corpus[p.target_utt].speaker.speaker_id ==
               corpus[p.source_utt].speaker.speaker_id);
    }
    pairs.push_back(p);
  }
  return pairs;
}

EvalRow evaluate_pairs(const ExperimentConfig& cfg, const ParamStore& ps,
                       const std::vector<Utterance>& corpus,
                       const std::vector<EvalPair>& pairs, const std::string& row_name,
                       bool nonstream) {
  // Zero-shot protocol: conversion runs only between held-out speakers.
  for (const auto& p : pairs) {
    if (corpus[p.source_utt].speaker.speaker_id < cfg.corpus.train_speakers ||
        corpus[p.target_utt].speaker.speaker_id < cfg.corpus.train_speakers)
      throw ProtocolError("evaluate: pair uses a training speaker (zero-shot violation)");
  }
  const ToyCodec codec(cfg.corpus);
  const int n = static_cast<int>(pairs.size());

  std::vector<long> correct(n, 0), total(n, 0);
  std::vector<int> speaker_hit(n, 0);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    const Utterance& src = corpus[pairs[i].source_utt];
    const Utterance& tgt = corpus[pairs[i].target_utt];
    const int p = std::min(cfg.stream.prompt_frames, tgt.sem_frames());
    AcousticTokens prompt_ac(2 * p, cfg.corpus.num_quantizers);
    for (int f = 0; f < 2 * p; ++f)
      for (int l = 0; l < cfg.corpus.num_quantizers; ++l)
        prompt_ac.at(f, l) = tgt.acoustic_tokens.at(f, l);

    ConnectorOutput prompt_rows = semantic_stream(cfg, ps, prompt_ac, nonstream);
    ConnectorOutput source_rows = semantic_stream(cfg, ps, src.acoustic_tokens, nonstream);
    BackboneRun run;
    run.use_lora = true;
    run.second_lora = nonstream;
    AcousticTokens converted =
        backbone_generate(cfg, ps, SemSide::embedded(prompt_rows.embeddings), prompt_ac,
                          SemSide::embedded(source_rows.embeddings), run);

    ContentProbe content = codec.probe_content(converted);
    for (int t = 0; t < src.sem_frames(); ++t) {
      if (content.symbols[t] == src.content[t]) ++correct[i];
      ++total[i];
    }
    SpeakerProbe speaker = codec.probe_speaker(converted);
    speaker_hit[i] = speaker.speaker_id == tgt.speaker.speaker_id ? 1 : 0;
  }

  EvalRow row;
  row.name = row_name;
  row.pairs = n;
  long csum = 0, tsum = 0, ssum = 0;
  for (int i = 0; i < n; ++i) {
    csum += correct[i];
    tsum += total[i];
    ssum += speaker_hit[i];
  }
  row.content_accuracy = tsum > 0 ? static_cast<double>(csum) / tsum : 0.0;
  row.speaker_transfer_accuracy = n > 0 ? static_cast<double>(ssum) / n : 0.0;
  for (const auto& p : pairs)
    if (p.source_utt == p.target_utt) row.zero_shot = false;
  return row;
}

EvalReport evaluate(const ExperimentConfig& cfg, const ParamStore& ps,
                    const std::vector<Utterance>& corpus,
                    const std::vector<EvalPair>& pairs, bool nonstream) {
  EvalReport report;
  report.rows.push_back(
      evaluate_pairs(cfg, ps, corpus, pairs, nonstream ? "nonstream" : "default", nonstream));
  std::vector<std::string> groups = {"backbone", "encoder", "linear", "connector",
                                     "backbone-lora"};
  if (nonstream) {
    groups.push_back("encoder-lora");
    groups.push_back("linear2");
    groups.push_back("connector2");
    groups.push_back("backbone-lora2");
  }
  for (const auto& g : groups)
    report.fingerprints.push_back(g + ":" + hex64(cfg.group_fingerprint(g)));
  return report;
}

std::string eval_report_json(const EvalReport& report) {
  nlohmann::json j;
  j["fingerprints"] = report.fingerprints;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"name", r.name},
                    {"content_accuracy", r.content_accuracy},
                    {"speaker_transfer_accuracy", r.speaker_transfer_accuracy},
                    {"style_correlation", r.style_correlation},
                    {"zero_shot", r.zero_shot},
                    {"pairs", r.pairs}});
  }
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

}  // namespace svc
