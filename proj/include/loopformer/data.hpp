#pragma once

#include <string>
#include <vector>

#include "loopformer/rng.hpp"
#include "loopformer/tensor.hpp"

namespace loopformer {

struct SentencePair {
  std::vector<std::string> src;
  std::vector<std::string> tgt;
};
using ParallelCorpus = std::vector<SentencePair>;

// Token <-> id bijection with fixed reserved ids.
class Vocab {
 public:
  static constexpr int pad_id = 0;
  static constexpr int bos_id = 1;
  static constexpr int eos_id = 2;
  static constexpr int unk_id = 3;
  static constexpr int reserved = 4;

  Vocab();

  // Frequency-ranked (ties broken lexicographically), capped at max_size
  // total ids including the reserved ones.
  static Vocab build(const ParallelCorpus& corpus, int max_size);
  static Vocab from_tokens(const std::vector<std::string>& content_tokens);

  // Content tokens only, one per line; line number + reserved = id.
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int id(const std::string& token) const;  // unk_id for unknown tokens
  const std::string& token(int id) const;

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> id_to_token_;
  std::vector<std::pair<std::string, int>> sorted_tokens_;  // binary-searchable
  void rebuild_index();
};

struct IdMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<int> v;

  int at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  int& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
};

// Padded token-id matrices plus additive attention-mask biases.
//   src:     source ids + eos, padded.
//   tgt_in:  bos + target ids, padded (decoder input).
//   tgt_out: target ids + eos, padded (supervision).
//   src_mask: [B,1,1,S] bias, 0 on real tokens, large negative on padding.
//   tgt_mask: [B,1,T,T] bias combining causal order and target padding.
struct Batch {
  IdMatrix src;
  IdMatrix tgt_in;
  IdMatrix tgt_out;
  Tensor src_mask;
  Tensor tgt_mask;
  int64_t non_pad_targets = 0;
};

enum class SyntheticTask { Copy, Reverse, Rot13Digits };
SyntheticTask synthetic_task_from_name(const std::string& name);

// Deterministic per seed. vocab_size counts reserved ids; rot13-digits needs
// 10 content tokens (the digits) and maps each to the digit 5 places on.
ParallelCorpus gen_synthetic(SyntheticTask task, int n_samples, int min_len, int max_len,
                             int vocab_size, uint64_t seed);

// Line-aligned UTF-8 files, whitespace-tokenized.
ParallelCorpus load_parallel(const std::string& src_path, const std::string& tgt_path);
void save_parallel(const ParallelCorpus& corpus, const std::string& src_path,
                   const std::string& tgt_path);

Batch make_single_batch(const std::vector<int>& src_ids, const std::vector<int>& tgt_ids);

struct BatchingResult {
  std::vector<Batch> batches;
  int skipped = 0;  // sentences longer than the token budget
};

// Length-bucketed batches where rows * max(padded src len, padded tgt len)
// stays within max_tokens. Batch order is shuffled deterministically per seed.
BatchingResult make_batches(const ParallelCorpus& corpus, const Vocab& vocab, int max_tokens,
                            uint64_t seed);

}  // namespace loopformer
