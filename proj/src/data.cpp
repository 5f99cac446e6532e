#include "loopformer/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "loopformer/ops.hpp"

namespace loopformer {

Vocab::Vocab() {
  id_to_token_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  rebuild_index();
}

void Vocab::rebuild_index() {
  sorted_tokens_.clear();
  sorted_tokens_.reserve(id_to_token_.size());
  for (size_t i = 0; i < id_to_token_.size(); ++i) {
    sorted_tokens_.emplace_back(id_to_token_[i], static_cast<int>(i));
  }
  std::sort(sorted_tokens_.begin(), sorted_tokens_.end());
}

Vocab Vocab::build(const ParallelCorpus& corpus, int max_size) {
  if (max_size <= reserved) {
    throw std::invalid_argument("vocab: max_size must exceed the " + std::to_string(reserved) +
                                " reserved ids");
  }
  std::map<std::string, int64_t> freq;  // ordered map keeps ties deterministic
  for (const auto& pair : corpus) {
    for (const auto& t : pair.src) ++freq[t];
    for (const auto& t : pair.tgt) ++freq[t];
  }
  std::vector<std::pair<std::string, int64_t>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& [tok, n] : items) {
    (void)n;
    if (v.size() >= max_size) break;
    v.id_to_token_.push_back(tok);
  }
  v.rebuild_index();
  return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& content_tokens) {
  Vocab v;
  for (const auto& t : content_tokens) v.id_to_token_.push_back(t);
  v.rebuild_index();
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("vocab: cannot write " + path);
  for (size_t i = reserved; i < id_to_token_.size(); ++i) out << id_to_token_[i] << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("vocab: cannot read " + path);
  Vocab v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    v.id_to_token_.push_back(line);
  }
  v.rebuild_index();
  return v;
}

int Vocab::id(const std::string& token) const {
  auto it = std::lower_bound(sorted_tokens_.begin(), sorted_tokens_.end(),
                             std::make_pair(token, 0),
                             [](const auto& a, const auto& b) { return a.first < b.first; });
  if (it != sorted_tokens_.end() && it->first == token) return it->second;
  return unk_id;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("vocab: id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(size()));
  }
  return id_to_token_[static_cast<size_t>(id)];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int i : ids) tokens.push_back(token(i));
  return tokens;
}

SyntheticTask synthetic_task_from_name(const std::string& name) {
  if (name == "copy") return SyntheticTask::Copy;
  if (name == "reverse") return SyntheticTask::Reverse;
  if (name == "rot13-digits") return SyntheticTask::Rot13Digits;
  throw std::invalid_argument("unknown task '" + name + "' (expected copy, reverse or rot13-digits)");
}

ParallelCorpus gen_synthetic(SyntheticTask task, int n_samples, int min_len, int max_len,
                             int vocab_size, uint64_t seed) {
  if (vocab_size <= Vocab::reserved) {
    throw std::invalid_argument("gen_synthetic: vocab_size must exceed " +
                                std::to_string(Vocab::reserved));
  }
  if (min_len < 1 || max_len < min_len) {
    throw std::invalid_argument("gen_synthetic: bad length range [" + std::to_string(min_len) +
                                "," + std::to_string(max_len) + "]");
  }
  const int content = vocab_size - Vocab::reserved;
  std::vector<std::string> symbols;
  if (task == SyntheticTask::Rot13Digits) {
    if (content < 10) {
      throw std::invalid_argument("gen_synthetic: rot13-digits needs vocab_size >= 14");
    }
    for (int i = 0; i < 10; ++i) symbols.push_back(std::to_string(i));
  } else {
    for (int i = 0; i < content; ++i) {
      if (i < 26) symbols.push_back(std::string(1, static_cast<char>('a' + i)));
      else symbols.push_back("w" + std::to_string(i));
    }
  }

  Rng rng(seed);
  ParallelCorpus corpus;
  corpus.reserve(static_cast<size_t>(n_samples));
  for (int s = 0; s < n_samples; ++s) {
    const int len = min_len + static_cast<int>(rng.below(static_cast<uint64_t>(max_len - min_len + 1)));
    SentencePair pair;
    for (int i = 0; i < len; ++i) {
      pair.src.push_back(symbols[rng.below(symbols.size())]);
    }
    switch (task) {
      case SyntheticTask::Copy:
        pair.tgt = pair.src;
        break;
      case SyntheticTask::Reverse:
        pair.tgt.assign(pair.src.rbegin(), pair.src.rend());
        break;
      case SyntheticTask::Rot13Digits:
        for (const auto& t : pair.src) {
          pair.tgt.push_back(std::to_string((std::stoi(t) + 5) % 10));
        }
        break;
    }
    corpus.push_back(std::move(pair));
  }
  return corpus;
}

namespace {

std::vector<std::vector<std::string>> read_token_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<std::vector<std::string>> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::vector<std::string> toks;
    std::string t;
    while (ss >> t) toks.push_back(t);
    lines.push_back(std::move(toks));
  }
  return lines;
}

}  // namespace

ParallelCorpus load_parallel(const std::string& src_path, const std::string& tgt_path) {
  auto src = read_token_lines(src_path);
  auto tgt = read_token_lines(tgt_path);
  if (src.size() != tgt.size()) {
    throw std::runtime_error("parallel files are not line-aligned: " + src_path + " has " +
                             std::to_string(src.size()) + " lines, " + tgt_path + " has " +
                             std::to_string(tgt.size()));
  }
  ParallelCorpus corpus(src.size());
  for (size_t i = 0; i < src.size(); ++i) {
    corpus[i].src = std::move(src[i]);
    corpus[i].tgt = std::move(tgt[i]);
  }
  return corpus;
}

void save_parallel(const ParallelCorpus& corpus, const std::string& src_path,
                   const std::string& tgt_path) {
  std::ofstream src(src_path, std::ios::binary), tgt(tgt_path, std::ios::binary);
  if (!src || !tgt) throw std::runtime_error("cannot write " + src_path + " / " + tgt_path);
  for (const auto& pair : corpus) {
    for (size_t i = 0; i < pair.src.size(); ++i) src << (i ? " " : "") << pair.src[i];
    src << "\n";
    for (size_t i = 0; i < pair.tgt.size(); ++i) tgt << (i ? " " : "") << pair.tgt[i];
    tgt << "\n";
  }
}

namespace {

struct EncodedPair {
  std::vector<int> src;     // ... eos
  std::vector<int> tgt_in;  // bos ...
  std::vector<int> tgt_out; // ... eos
};

Batch assemble_batch(const std::vector<EncodedPair>& pairs) {
  const int b = static_cast<int>(pairs.size());
  int s_max = 0, t_max = 0;
  for (const auto& p : pairs) {
    s_max = std::max(s_max, static_cast<int>(p.src.size()));
    t_max = std::max(t_max, static_cast<int>(p.tgt_in.size()));
  }
  Batch batch;
  batch.src = {b, s_max, std::vector<int>(static_cast<size_t>(b) * s_max, Vocab::pad_id)};
  batch.tgt_in = {b, t_max, std::vector<int>(static_cast<size_t>(b) * t_max, Vocab::pad_id)};
  batch.tgt_out = {b, t_max, std::vector<int>(static_cast<size_t>(b) * t_max, Vocab::pad_id)};
  for (int r = 0; r < b; ++r) {
    const auto& p = pairs[static_cast<size_t>(r)];
    for (size_t c = 0; c < p.src.size(); ++c) batch.src.at(r, static_cast<int>(c)) = p.src[c];
    for (size_t c = 0; c < p.tgt_in.size(); ++c) batch.tgt_in.at(r, static_cast<int>(c)) = p.tgt_in[c];
    for (size_t c = 0; c < p.tgt_out.size(); ++c) batch.tgt_out.at(r, static_cast<int>(c)) = p.tgt_out[c];
  }

  batch.src_mask = Tensor::zeros({b, 1, 1, s_max});
  auto& sm = batch.src_mask.data();
  for (int r = 0; r < b; ++r) {
    for (int c = 0; c < s_max; ++c) {
      if (batch.src.at(r, c) == Vocab::pad_id) sm[static_cast<size_t>(r) * s_max + c] = kMaskValue;
    }
  }

  batch.tgt_mask = Tensor::zeros({b, 1, t_max, t_max});
  auto& tm = batch.tgt_mask.data();
  for (int r = 0; r < b; ++r) {
    for (int i = 0; i < t_max; ++i) {
      for (int j = 0; j < t_max; ++j) {
        const bool future = j > i;
        const bool pad_key = batch.tgt_in.at(r, j) == Vocab::pad_id;
        if (future || pad_key) {
          tm[(static_cast<size_t>(r) * t_max + i) * t_max + j] = kMaskValue;
        }
      }
    }
  }

  for (int id : batch.tgt_out.v) {
    if (id != Vocab::pad_id) ++batch.non_pad_targets;
  }
  return batch;
}

EncodedPair encode_pair(const std::vector<int>& src_ids, const std::vector<int>& tgt_ids) {
  EncodedPair p;
  p.src = src_ids;
  p.src.push_back(Vocab::eos_id);
  p.tgt_in.push_back(Vocab::bos_id);
  p.tgt_in.insert(p.tgt_in.end(), tgt_ids.begin(), tgt_ids.end());
  p.tgt_out = tgt_ids;
  p.tgt_out.push_back(Vocab::eos_id);
  return p;
}

}  // namespace

Batch make_single_batch(const std::vector<int>& src_ids, const std::vector<int>& tgt_ids) {
  return assemble_batch({encode_pair(src_ids, tgt_ids)});
}

BatchingResult make_batches(const ParallelCorpus& corpus, const Vocab& vocab, int max_tokens,
                            uint64_t seed) {
  if (max_tokens < 3) throw std::invalid_argument("make_batches: max_tokens too small");

  std::vector<EncodedPair> pairs;
  pairs.reserve(corpus.size());
  BatchingResult result;
  for (const auto& sp : corpus) {
    EncodedPair p = encode_pair(vocab.encode(sp.src), vocab.encode(sp.tgt));
    const int longest = static_cast<int>(std::max(p.src.size(), p.tgt_in.size()));
    if (longest > max_tokens) {
      ++result.skipped;
      continue;
    }
    pairs.push_back(std::move(p));
  }

  // Bucket by length so padding stays tight, then fill batches up to the
  // padded-token budget.
  std::vector<size_t> order(pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (pairs[a].src.size() != pairs[b].src.size()) return pairs[a].src.size() < pairs[b].src.size();
    return pairs[a].tgt_in.size() < pairs[b].tgt_in.size();
  });

  std::vector<std::vector<EncodedPair>> groups;
  std::vector<EncodedPair> current;
  int cur_max_len = 0;
  for (size_t idx : order) {
    const auto& p = pairs[idx];
    const int len = static_cast<int>(std::max(p.src.size(), p.tgt_in.size()));
    const int new_max = std::max(cur_max_len, len);
    if (!current.empty() &&
        static_cast<int64_t>(current.size() + 1) * new_max > max_tokens) {
      groups.push_back(std::move(current));
      current.clear();
      cur_max_len = 0;
    }
    cur_max_len = std::max(cur_max_len, len);
    current.push_back(p);
  }
  if (!current.empty()) groups.push_back(std::move(current));

  Rng rng(seed);
  for (size_t i = groups.size(); i > 1; --i) {
    std::swap(groups[i - 1], groups[rng.below(i)]);
  }
  result.batches.reserve(groups.size());
  for (const auto& g : groups) result.batches.push_back(assemble_batch(g));
  return result;
}

}  // namespace loopformer
