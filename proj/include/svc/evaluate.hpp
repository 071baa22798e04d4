#pragma once

#include <string>
#include <vector>

#include "svc/config.hpp"
#include "svc/corpus.hpp"
#include "svc/params.hpp"

namespace svc {

struct EvalPair {
  int source_utt = -1;  // converted content
  int target_utt = -1;  // provides the speaker prompt
};

struct EvalRow {
  std::string name;  // config delta this row measures
  double content_accuracy = 0.0;
  double speaker_transfer_accuracy = 0.0;
  std::string style_correlation = "n/a";  // no toy analogue; reported honestly
  bool zero_shot = true;
  int pairs = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  // Config fingerprints of every checkpoint group used, "group:hex" strings.
  std::vector<std::string> fingerprints;
};

// Pairs over held-out speakers only. identity = true pairs each source
// utterance with itself (non-zero-shot sanity mode).
std::vector<EvalPair> make_eval_pairs(const ExperimentConfig& cfg,
                                      const std::vector<Utterance>& corpus, int count,
                                      std::uint64_t seed, bool identity = false);

// Converts every pair with greedy decoding through the streaming parameter
// set (or the non-streaming set when nonstream) and aggregates oracle probes.
// Refuses pairs whose speakers overlap the training speakers.
EvalRow evaluate_pairs(const ExperimentConfig& cfg, const ParamStore& ps,
                       const std::vector<Utterance>& corpus,
                       const std::vector<EvalPair>& pairs, const std::string& row_name,
                       bool nonstream = false);

EvalReport evaluate(const ExperimentConfig& cfg, const ParamStore& ps,
                    const std::vector<Utterance>& corpus,
                    const std::vector<EvalPair>& pairs, bool nonstream = false);

std::string eval_report_json(const EvalReport& report);

}  // namespace svc
