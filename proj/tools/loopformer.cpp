// Command-line front end: data generation, training, decoding, scoring,
// parameter reports and gradient checks, wired through a flat key=value
// config file. Exit codes: 0 success, 1 usage/config error, 2 runtime
// failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "loopformer/checkpoint.hpp"
#include "loopformer/config.hpp"
#include "loopformer/data.hpp"
#include "loopformer/eval.hpp"
#include "loopformer/grad_check.hpp"
#include "loopformer/log.hpp"
#include "loopformer/model.hpp"
#include "loopformer/train.hpp"

namespace lf = loopformer;
namespace fs = std::filesystem;

namespace {

lf::RunConfig load_config(const std::string& path) {
  lf::RunConfig cfg = lf::RunConfig::parse_file(path);
  cfg.validate();
  return cfg;
}

struct CorpusWithVocab {
  lf::ParallelCorpus corpus;
  lf::Vocab vocab;
};

CorpusWithVocab prepare_data(const lf::RunConfig& cfg) {
  CorpusWithVocab out;
  if (!cfg.data.src.empty()) {
    out.corpus = lf::load_parallel(cfg.data.src, cfg.data.tgt);
    out.vocab = lf::Vocab::build(out.corpus, cfg.data.vocab_size);
  } else {
    out.corpus = lf::gen_synthetic(lf::synthetic_task_from_name(cfg.data.task), cfg.data.n_samples,
                                   cfg.data.min_len, cfg.data.max_len, cfg.data.vocab_size,
                                   lf::split_seed(cfg.train.seed, 4));
    out.vocab = lf::Vocab::build(out.corpus, cfg.data.vocab_size);
  }
  return out;
}

std::vector<std::vector<std::string>> read_lines_tokenized(const std::string& path) {
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

int cmd_make_data(const std::string& config_path, const std::string& out_dir) {
  lf::RunConfig cfg = load_config(config_path);
  if (!cfg.data.src.empty()) {
    throw lf::ConfigError("config: make-data needs a synthetic data.task, not data.src/data.tgt");
  }
  CorpusWithVocab data = prepare_data(cfg);
  fs::create_directories(out_dir);
  lf::save_parallel(data.corpus, out_dir + "/train.src", out_dir + "/train.tgt");
  data.vocab.save(out_dir + "/vocab.txt");
  std::printf("wrote %zu sentence pairs to %s/train.{src,tgt}, vocab size %d\n", data.corpus.size(),
              out_dir.c_str(), data.vocab.size());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, int average_last) {
  lf::RunConfig cfg = load_config(config_path);
  CorpusWithVocab data = prepare_data(cfg);
  fs::create_directories(out_dir);
  data.vocab.save(out_dir + "/vocab.txt");

  lf::ModelConfig mc = cfg.model;
  mc.vocab_size = data.vocab.size();
  lf::RngPool rngs(cfg.train.seed);
  lf::RecurrentModel model = lf::init_model(mc, rngs.init);
  lf::log_info("training: %lld parameters, %d sentence pairs, vocab %d",
               static_cast<long long>(model.parameter_total()), static_cast<int>(data.corpus.size()),
               data.vocab.size());

  lf::RunConfig resolved = cfg;
  resolved.model.vocab_size = data.vocab.size();
  lf::TrainRunResult result = lf::run_training(resolved, model, data.corpus, data.vocab, out_dir);

  if (average_last > 0) {
    const int n = std::min<int>(average_last, static_cast<int>(result.checkpoint_paths.size()));
    std::vector<std::string> tail(result.checkpoint_paths.end() - n, result.checkpoint_paths.end());
    lf::Checkpoint avg = lf::average_checkpoints(tail);
    lf::save_checkpoint(out_dir + "/ckpt-averaged", avg);
    lf::log_info("averaged last %d checkpoints into %s/ckpt-averaged", n, out_dir.c_str());
  }
  std::printf("final step %lld loss %.6f\n", static_cast<long long>(result.final_step),
              result.final_loss);
  return 0;
}

int cmd_translate(const std::string& config_path, const std::string& ckpt_path,
                  const std::string& vocab_path, const std::string& input_path,
                  const std::string& output_path) {
  lf::RunConfig cfg = load_config(config_path);
  lf::Vocab vocab = lf::Vocab::load(vocab_path);

  lf::ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();
  lf::RngPool rngs(cfg.train.seed);
  lf::RecurrentModel model = lf::init_model(mc, rngs.init);
  lf::Checkpoint ckpt = lf::load_checkpoint(ckpt_path);
  lf::load_parameters(model.parameters(), ckpt);

  auto lines = read_lines_tokenized(input_path);
  std::ofstream out(output_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + output_path);
  for (const auto& tokens : lines) {
    const std::vector<int> src_ids = vocab.encode(tokens);
    std::vector<int> hyp_ids;
    if (cfg.eval.beam == 1) {
      hyp_ids = lf::greedy_decode(model, src_ids, cfg.eval.max_len);
    } else {
      lf::Hypothesis hyp =
          lf::beam_search(model, src_ids, cfg.eval.beam, cfg.eval.alpha, cfg.eval.max_len);
      hyp_ids = lf::hypothesis_tokens(hyp, lf::Vocab::eos_id);
    }
    const auto words = vocab.decode(hyp_ids);
    for (size_t i = 0; i < words.size(); ++i) out << (i ? " " : "") << words[i];
    out << "\n";
  }
  lf::log_info("translated %zu lines from %s to %s", lines.size(), input_path.c_str(),
               output_path.c_str());
  return 0;
}

int cmd_score(const std::string& hyp_path, const std::string& ref_path) {
  auto hyps = read_lines_tokenized(hyp_path);
  auto refs = read_lines_tokenized(ref_path);
  if (hyps.size() != refs.size()) {
    throw std::runtime_error("hypothesis/reference line counts differ: " +
                             std::to_string(hyps.size()) + " vs " + std::to_string(refs.size()));
  }
  lf::BleuResult bleu = lf::corpus_bleu(hyps, refs);
  std::printf("%s\n", bleu.report().c_str());
  return 0;
}

int cmd_count_params(const std::string& config_path, bool csv) {
  lf::RunConfig cfg = load_config(config_path);
  if (cfg.model.vocab_size <= 0) {
    throw lf::ConfigError("config: model.vocab_size must be set for count-params");
  }
  if (csv) std::printf("%s", lf::param_report_csv(cfg.model).c_str());
  else std::printf("%s", lf::param_report_text(cfg.model).c_str());
  return 0;
}

int cmd_grad_check(const std::string& config_path) {
  lf::RunConfig cfg = load_config(config_path);

  lf::ModelConfig mc = cfg.model;
  mc.dropout = 0.0;  // finite differences need a deterministic forward
  lf::RngPool rngs(cfg.train.seed);

  lf::ParallelCorpus corpus = lf::gen_synthetic(lf::SyntheticTask::Copy, 4, 3, 5, 12,
                                                lf::split_seed(cfg.train.seed, 4));
  lf::Vocab vocab = lf::Vocab::build(corpus, 12);
  mc.vocab_size = vocab.size();
  lf::RecurrentModel model = lf::init_model(mc, rngs.init);
  lf::BatchingResult batches = lf::make_batches(corpus, vocab, 64, 7);
  const lf::Batch& batch = batches.batches.front();

  auto loss_fn = [&]() {
    return lf::forward_loss(model, batch, cfg.train.label_smoothing, /*training=*/false, nullptr);
  };
  lf::GradCheckReport fd = lf::grad_check(loss_fn, model.parameters(), 1e-5, 1e-4);
  std::printf("finite differences: %lld entries, max rel err %.3e -> %s\n",
              static_cast<long long>(fd.entries), fd.max_rel_err, fd.ok() ? "ok" : "FAILED");
  for (size_t i = 0; i < fd.failures.size() && i < 10; ++i) {
    const auto& f = fd.failures[i];
    std::printf("  %s[%lld] analytic %.6e vs fd %.6e\n", f.param.c_str(),
                static_cast<long long>(f.index), f.analytic, f.fd);
  }

  lf::ShareCheckReport share = lf::shared_gradient_accumulation_check(model, batch);
  std::printf("clone-and-sum: %d entries, max rel err %.3e -> %s\n", share.compared,
              share.max_rel_err, share.ok ? "ok" : "FAILED");
  for (size_t i = 0; i < share.failures.size() && i < 10; ++i) {
    std::printf("  %s\n", share.failures[i].c_str());
  }

  if (!fd.ok() || !share.ok) return 2;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"loopformer: depth-recurrent transformer toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt_path, vocab_path, input_path, output_path;
  std::string hyp_path, ref_path;
  int average_last = 0;
  bool csv = false;

  auto* make_data = app.add_subcommand("make-data", "generate a synthetic parallel corpus");
  make_data->add_option("--config", config_path, "config file")->required();
  make_data->add_option("--out-dir", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model and write checkpoints + metrics");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--out-dir", out_dir, "run directory")->required();
  train->add_option("--average-last", average_last, "also write the average of the last k checkpoints");

  auto* translate = app.add_subcommand("translate", "decode an input file with a trained model");
  translate->add_option("--config", config_path, "config file")->required();
  translate->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  translate->add_option("--vocab", vocab_path, "vocab file")->required();
  translate->add_option("--input", input_path, "source text, one sentence per line")->required();
  translate->add_option("--output", output_path, "where to write translations")->required();

  auto* score = app.add_subcommand("score", "corpus BLEU of a hypothesis file against a reference");
  score->add_option("--hyp", hyp_path, "hypothesis file")->required();
  score->add_option("--ref", ref_path, "reference file")->required();

  auto* count = app.add_subcommand("count-params", "parameter accounting for a config");
  count->add_option("--config", config_path, "config file")->required();
  count->add_flag("--csv", csv, "machine-readable output");

  auto* gradcheck = app.add_subcommand("grad-check", "finite-difference and clone-and-sum gradient checks");
  gradcheck->add_option("--config", config_path, "config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(make_data)) return cmd_make_data(config_path, out_dir);
    if (app.got_subcommand(train)) return cmd_train(config_path, out_dir, average_last);
    if (app.got_subcommand(translate)) {
      return cmd_translate(config_path, ckpt_path, vocab_path, input_path, output_path);
    }
    if (app.got_subcommand(score)) return cmd_score(hyp_path, ref_path);
    if (app.got_subcommand(count)) return cmd_count_params(config_path, csv);
    if (app.got_subcommand(gradcheck)) return cmd_grad_check(config_path);
  } catch (const lf::ConfigError& e) {
    lf::log_error("%s", e.what());
    return 1;
  } catch (const std::exception& e) {
    lf::log_error("%s", e.what());
    return 2;
  }
  return 1;
}
