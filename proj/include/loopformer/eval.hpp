#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "loopformer/model.hpp"

namespace loopformer {

struct Hypothesis {
  std::vector<int> ids;  // includes the closing eos when finished by eos
  double logp = 0.0;
  bool finished = false;
};

// Log-probabilities of the next token given the emitted prefix (bos and eos
// handling live behind the scorer).
using StepScorer = std::function<std::vector<double>(const std::vector<int>& prefix)>;

// Encodes src once and closes over it; each call re-decodes the prefix.
StepScorer make_model_scorer(const RecurrentModel& model, const std::vector<int>& src_ids);

// Argmax per step, ties to the lowest id; stops at eos or max_len. Returns
// the emitted tokens without eos.
std::vector<int> greedy_decode(const StepScorer& scorer, int eos_id, int max_len);
std::vector<int> greedy_decode(const RecurrentModel& model, const std::vector<int>& src_ids,
                               int max_len);

double length_penalty(int length, double alpha);  // ((5+|Y|)/6)^alpha

// Standard beam expansion keeping the top `beam` continuations by raw
// log-probability per step; finished hypotheses are ranked by
// logp / length_penalty. Ties break to the shorter, then lexicographically
// smaller id sequence. beam == 1 reduces to greedy.
Hypothesis beam_search(const StepScorer& scorer, int eos_id, int beam, double alpha, int max_len);
Hypothesis beam_search(const RecurrentModel& model, const std::vector<int>& src_ids, int beam,
                       double alpha, int max_len);

// Strips a trailing eos; what a translation writes out.
std::vector<int> hypothesis_tokens(const Hypothesis& hyp, int eos_id);

struct BleuResult {
  double bleu = 0.0;                    // [0, 100]
  std::array<double, 4> precisions{};   // modified n-gram precisions
  double brevity_penalty = 1.0;
  double length_ratio = 0.0;            // hyp_len / ref_len
  int64_t hyp_len = 0;
  int64_t ref_len = 0;

  std::string report() const;  // "BLEU = ... (p1/p2/p3/p4, BP=..., ratio=...)"
};

// Corpus-level geometric mean of clipped n-gram precisions times the brevity
// penalty. Case-sensitive, whitespace tokens, no smoothing: any zero
// precision gives BLEU 0.
BleuResult corpus_bleu(const std::vector<std::vector<std::string>>& hyps,
                       const std::vector<std::vector<std::string>>& refs, int max_n = 4);

// Human-readable / CSV parameter accounting, with the size ratio against a
// 6/6 stacked reference at d_model 1024, d_ff 4096, 16 heads.
std::string param_report_text(const ModelConfig& cfg);
std::string param_report_csv(const ModelConfig& cfg);

}  // namespace loopformer
