#include "loopformer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace loopformer {

StepScorer make_model_scorer(const RecurrentModel& model, const std::vector<int>& src_ids) {
  // encode once; decoding re-runs only the target side
  ForwardCtx ctx = make_ctx(model.config, /*training=*/false, nullptr);

  std::vector<int> src = src_ids;
  src.push_back(Vocab::eos_id);
  IdMatrix src_m{1, static_cast<int>(src.size()), src};
  Tensor src_mask = Tensor::zeros({1, 1, 1, src_m.cols});

  Tensor x = embed_sequence(model, src_m, ctx);
  Tensor enc_out = encoder_forward(model, x, src_mask, ctx);

  return [&model, ctx, enc_out, src_mask](const std::vector<int>& prefix) {
    std::vector<int> tgt_in;
    tgt_in.push_back(Vocab::bos_id);
    tgt_in.insert(tgt_in.end(), prefix.begin(), prefix.end());
    IdMatrix tgt_m{1, static_cast<int>(tgt_in.size()), tgt_in};

    const int t = tgt_m.cols;
    Tensor tgt_mask = Tensor::zeros({1, 1, t, t});
    auto& tm = tgt_mask.data();
    for (int i = 0; i < t; ++i) {
      for (int j = i + 1; j < t; ++j) tm[static_cast<size_t>(i) * t + j] = kMaskValue;
    }

    Tensor y = embed_sequence(model, tgt_m, ctx);
    Tensor states = decoder_forward(model, y, enc_out, tgt_mask, src_mask, ctx);
    Tensor logits = output_logits(model, states);

    // log-softmax of the last position
    const int v = logits.dim(2);
    const auto& d = logits.data();
    const size_t base = static_cast<size_t>(t - 1) * v;
    double mx = d[base];
    for (int i = 1; i < v; ++i) mx = std::max(mx, d[base + static_cast<size_t>(i)]);
    double lse = 0.0;
    for (int i = 0; i < v; ++i) lse += std::exp(d[base + static_cast<size_t>(i)] - mx);
    lse = mx + std::log(lse);
    std::vector<double> logp(static_cast<size_t>(v));
    for (int i = 0; i < v; ++i) logp[static_cast<size_t>(i)] = d[base + static_cast<size_t>(i)] - lse;
    return logp;
  };
}

std::vector<int> greedy_decode(const StepScorer& scorer, int eos_id, int max_len) {
  std::vector<int> out;
  for (int step = 0; step < max_len; ++step) {
    const std::vector<double> logp = scorer(out);
    int best = 0;
    for (int i = 1; i < static_cast<int>(logp.size()); ++i) {
      if (logp[static_cast<size_t>(i)] > logp[static_cast<size_t>(best)]) best = i;
    }
    if (best == eos_id) break;
    out.push_back(best);
  }
  return out;
}

std::vector<int> greedy_decode(const RecurrentModel& model, const std::vector<int>& src_ids,
                               int max_len) {
  return greedy_decode(make_model_scorer(model, src_ids), Vocab::eos_id, max_len);
}

double length_penalty(int length, double alpha) {
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

namespace {

// final ranking: higher normalized score, then shorter, then lexicographic
bool better_finished(const Hypothesis& a, double score_a, const Hypothesis& b, double score_b) {
  if (score_a != score_b) return score_a > score_b;
  if (a.ids.size() != b.ids.size()) return a.ids.size() < b.ids.size();
  return a.ids < b.ids;
}

}  // namespace

Hypothesis beam_search(const StepScorer& scorer, int eos_id, int beam, double alpha, int max_len) {
  if (beam < 1) throw std::invalid_argument("beam_search: beam must be >= 1, got " + std::to_string(beam));

  std::vector<Hypothesis> alive{{{}, 0.0, false}};
  std::vector<Hypothesis> finished;

  for (int step = 0; step < max_len && !alive.empty(); ++step) {
    struct Candidate {
      double logp;
      size_t parent;
      int token;
    };
    std::vector<Candidate> cands;
    for (size_t p = 0; p < alive.size(); ++p) {
      const std::vector<double> logp = scorer(alive[p].ids);
      for (int tok = 0; tok < static_cast<int>(logp.size()); ++tok) {
        cands.push_back({alive[p].logp + logp[static_cast<size_t>(tok)], p, tok});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      if (a.parent != b.parent) return alive[a.parent].ids < alive[b.parent].ids;
      return a.token < b.token;
    });

    const bool last_step = step + 1 == max_len;
    std::vector<Hypothesis> next_alive;
    for (size_t c = 0; c < cands.size() && c < static_cast<size_t>(beam); ++c) {
      Hypothesis h = alive[cands[c].parent];
      h.ids.push_back(cands[c].token);
      h.logp = cands[c].logp;
      if (cands[c].token == eos_id || last_step) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        next_alive.push_back(std::move(h));
      }
    }
    alive = std::move(next_alive);
  }

  if (finished.empty()) {
    throw std::runtime_error("beam_search: no finished hypothesis (max_len == 0?)");
  }
  size_t best = 0;
  double best_score = finished[0].logp / length_penalty(static_cast<int>(finished[0].ids.size()), alpha);
  for (size_t i = 1; i < finished.size(); ++i) {
    const double score =
        finished[i].logp / length_penalty(static_cast<int>(finished[i].ids.size()), alpha);
    if (better_finished(finished[i], score, finished[best], best_score)) {
      best = i;
      best_score = score;
    }
  }
  return finished[best];
}

Hypothesis beam_search(const RecurrentModel& model, const std::vector<int>& src_ids, int beam,
                       double alpha, int max_len) {
  return beam_search(make_model_scorer(model, src_ids), Vocab::eos_id, beam, alpha, max_len);
}

std::vector<int> hypothesis_tokens(const Hypothesis& hyp, int eos_id) {
  std::vector<int> ids = hyp.ids;
  if (!ids.empty() && ids.back() == eos_id) ids.pop_back();
  return ids;
}

BleuResult corpus_bleu(const std::vector<std::vector<std::string>>& hyps,
                       const std::vector<std::vector<std::string>>& refs, int max_n) {
  if (hyps.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  if (hyps.size() != refs.size()) {
    throw std::invalid_argument("corpus_bleu: " + std::to_string(hyps.size()) + " hypotheses vs " +
                                std::to_string(refs.size()) + " references");
  }
  if (max_n < 1 || max_n > 4) throw std::invalid_argument("corpus_bleu: max_n must be in [1,4]");

  BleuResult r;
  std::vector<int64_t> correct(static_cast<size_t>(max_n), 0), total(static_cast<size_t>(max_n), 0);
  for (size_t s = 0; s < hyps.size(); ++s) {
    const auto& hyp = hyps[s];
    const auto& ref = refs[s];
    r.hyp_len += static_cast<int64_t>(hyp.size());
    r.ref_len += static_cast<int64_t>(ref.size());
    for (int n = 1; n <= max_n; ++n) {
      const int64_t h_count = static_cast<int64_t>(hyp.size()) - n + 1;
      if (h_count <= 0) continue;
      total[static_cast<size_t>(n - 1)] += h_count;

      std::map<std::vector<std::string>, int64_t> ref_ngrams;
      for (size_t i = 0; i + n <= ref.size(); ++i) {
        ++ref_ngrams[std::vector<std::string>(ref.begin() + static_cast<long>(i),
                                              ref.begin() + static_cast<long>(i + n))];
      }
      std::map<std::vector<std::string>, int64_t> hyp_ngrams;
      for (size_t i = 0; i + n <= hyp.size(); ++i) {
        ++hyp_ngrams[std::vector<std::string>(hyp.begin() + static_cast<long>(i),
                                              hyp.begin() + static_cast<long>(i + n))];
      }
      for (const auto& [gram, count] : hyp_ngrams) {
        auto it = ref_ngrams.find(gram);
        if (it != ref_ngrams.end()) {
          correct[static_cast<size_t>(n - 1)] += std::min(count, it->second);
        }
      }
    }
  }

  bool any_zero = false;
  double log_precision = 0.0;
  for (int n = 0; n < max_n; ++n) {
    const double p = total[static_cast<size_t>(n)] > 0
                         ? static_cast<double>(correct[static_cast<size_t>(n)]) /
                               static_cast<double>(total[static_cast<size_t>(n)])
                         : 0.0;
    r.precisions[static_cast<size_t>(n)] = p;
    if (p <= 0.0) any_zero = true;
    else log_precision += std::log(p);
  }
  r.length_ratio = r.ref_len > 0 ? static_cast<double>(r.hyp_len) / static_cast<double>(r.ref_len) : 0.0;
  r.brevity_penalty = r.hyp_len < r.ref_len
                          ? std::exp(1.0 - static_cast<double>(r.ref_len) / static_cast<double>(r.hyp_len))
                          : 1.0;
  r.bleu = any_zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_precision / max_n);
  return r;
}

std::string BleuResult::report() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "BLEU = %.2f (%.1f/%.1f/%.1f/%.1f, BP=%.3f, ratio=%.3f)", bleu,
                100.0 * precisions[0], 100.0 * precisions[1], 100.0 * precisions[2],
                100.0 * precisions[3], brevity_penalty, length_ratio);
  return buf;
}

namespace {

ModelConfig reference_big_config(int vocab_size) {
  ModelConfig big;
  big.d_model = 1024;
  big.d_ff = 4096;
  big.heads = 16;
  big.enc_layers = 6;
  big.dec_layers = 6;
  big.enc_mode = ShareMode::Stacked;
  big.dec_mode = ShareMode::Stacked;
  big.enc_loops = 1;
  big.dec_loops = 1;
  big.vocab_size = vocab_size;
  return big;
}

}  // namespace

std::string param_report_text(const ModelConfig& cfg) {
  const ParamBreakdown b = param_count(cfg);
  const ParamBreakdown big = param_count(reference_big_config(cfg.vocab_size));
  std::ostringstream out;
  out << "parameter breakdown\n";
  out << "  d_model=" << cfg.d_model << " d_ff=" << cfg.d_ff << " heads=" << cfg.heads
      << " vocab=" << cfg.vocab_size << "\n";
  out << "  encoder: " << share_mode_name(cfg.enc_mode) << " N=" << cfg.enc_layers
      << " T=" << cfg.enc_loops << "  decoder: " << share_mode_name(cfg.dec_mode)
      << " N=" << cfg.dec_layers << " T=" << cfg.dec_loops << "\n";
  out << "  embedding (tied in/out):      " << b.embedding << "\n";
  out << "  encoder (" << b.enc_physical_layers << " physical x " << b.per_enc_layer
      << "): " << b.encoder << "\n";
  out << "  decoder (" << b.dec_physical_layers << " physical x " << b.per_dec_layer
      << "): " << b.decoder << "\n";
  out << "  final norms:                  " << b.final_norms << "\n";
  out << "  total:                        " << b.total << "\n";
  char line[128];
  std::snprintf(line, sizeof(line), "  total (millions):             %.2fM\n",
                static_cast<double>(b.total) / 1e6);
  out << line;
  std::snprintf(line, sizeof(line), "  ratio vs big 6/6 reference:   %.2f%%\n",
                100.0 * static_cast<double>(b.total) / static_cast<double>(big.total));
  out << line;
  return out.str();
}

std::string param_report_csv(const ModelConfig& cfg) {
  const ParamBreakdown b = param_count(cfg);
  const ParamBreakdown big = param_count(reference_big_config(cfg.vocab_size));
  std::ostringstream out;
  out << "group,count\n";
  out << "embedding," << b.embedding << "\n";
  out << "encoder," << b.encoder << "\n";
  out << "decoder," << b.decoder << "\n";
  out << "final_norms," << b.final_norms << "\n";
  out << "total," << b.total << "\n";
  char line[64];
  std::snprintf(line, sizeof(line), "ratio_vs_big,%.6f\n",
                static_cast<double>(b.total) / static_cast<double>(big.total));
  out << line;
  return out.str();
}

}  // namespace loopformer
