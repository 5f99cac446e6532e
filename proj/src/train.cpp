#include "loopformer/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "loopformer/log.hpp"

namespace loopformer {

double LrSchedule::at(int64_t step) const {
  if (step < 1) throw std::invalid_argument("lr schedule: step must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup_steps);
  return scale * std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, AdamOptions opt)
    : params_(std::move(params)), opt_(opt) {
  for (const auto& [name, t] : params_) {
    (void)name;
    m_.emplace_back(static_cast<size_t>(t.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(t.numel()), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (size_t p = 0; p < params_.size(); ++p) {
    auto& tensor = params_[p].second;
    auto& data = tensor.data();
    const std::vector<double>* grad = tensor.has_grad() ? &tensor.node()->grad : nullptr;
    auto& m = m_[p];
    auto& v = v_[p];
    for (size_t i = 0; i < data.size(); ++i) {
      const double g = grad ? (*grad)[i] : 0.0;
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] -= lr * mhat / (std::sqrt(vhat) + opt_.eps);
    }
  }
}

void Adam::restore(uint64_t t, std::vector<std::vector<double>> m,
                   std::vector<std::vector<double>> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw std::runtime_error("adam: moment buffers do not match parameter list");
  }
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

void zero_grads(const std::vector<std::pair<std::string, Tensor>>& params) {
  for (const auto& [name, t] : params) {
    (void)name;
    t.zero_grad();
  }
}

double grad_global_norm(const std::vector<std::pair<std::string, Tensor>>& params) {
  double s = 0.0;
  for (const auto& [name, t] : params) {
    (void)name;
    if (!t.has_grad()) continue;
    for (double g : t.node()->grad) s += g * g;
  }
  return std::sqrt(s);
}

StepMetrics train_step(const RecurrentModel& model, const Batch& batch, Adam& opt,
                       const LrSchedule& sched, double label_smoothing, double clip_norm,
                       Rng& dropout_rng, int64_t step) {
  zero_grads(opt.params());

  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = forward_loss(model, batch, label_smoothing, /*training=*/true, &dropout_rng);
    if (!std::isfinite(loss.item())) {
      throw std::runtime_error("training aborted at step " + std::to_string(step) +
                               ": non-finite loss");
    }
    tape.backward(loss);
  }

  StepMetrics metrics;
  metrics.step = step;
  metrics.loss = loss.item();
  metrics.grad_norm = grad_global_norm(opt.params());
  if (clip_norm > 0.0 && metrics.grad_norm > clip_norm) {
    const double factor = clip_norm / metrics.grad_norm;
    for (const auto& [name, t] : opt.params()) {
      (void)name;
      if (!t.has_grad()) continue;
      for (double& g : t.node()->grad) g *= factor;
    }
  }
  metrics.lr = sched.at(step);
  opt.step(metrics.lr);
  metrics.tokens = batch.non_pad_targets;
  return metrics;
}

Checkpoint snapshot_model(const RecurrentModel& model, const std::string& config_text,
                          uint64_t step, const Adam* opt) {
  Checkpoint ckpt;
  ckpt.config_text = config_text;
  ckpt.step = step;
  for (const auto& [name, t] : model.parameters()) {
    // copy-then-write: the snapshot owns its buffers
    ckpt.params.emplace_back(name, Tensor(t.shape(), t.data()));
  }
  if (opt != nullptr) {
    ckpt.has_optimizer = true;
    ckpt.adam_t = opt->steps_taken();
    ckpt.adam_m = opt->moment1();
    ckpt.adam_v = opt->moment2();
  }
  return ckpt;
}

TrainRunResult run_training(const RunConfig& cfg, RecurrentModel& model,
                            const ParallelCorpus& corpus, const Vocab& vocab,
                            const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  {
    std::ofstream resolved(out_dir + "/config.resolved", std::ios::binary);
    if (!resolved) throw std::runtime_error("cannot write " + out_dir + "/config.resolved");
    resolved << cfg.resolved_text();
  }

  std::ofstream metrics_csv(out_dir + "/metrics.csv", std::ios::binary);
  if (!metrics_csv) throw std::runtime_error("cannot write " + out_dir + "/metrics.csv");
  metrics_csv << "step,loss,lr,grad_norm,tokens_per_step\n";

  RngPool rngs(cfg.train.seed);
  Adam opt(model.parameters(), {cfg.train.beta1, cfg.train.beta2, cfg.train.eps});
  LrSchedule sched{cfg.model.d_model, cfg.train.warmup_steps, cfg.train.lr_scale};
  const std::string config_text = cfg.resolved_text();
  const uint64_t shuffle_root = split_seed(cfg.train.seed, 3);

  TrainRunResult result;
  int64_t step = 0;
  int epoch = 0;
  char row[160];
  while (step < cfg.train.max_steps) {
    BatchingResult epoch_batches =
        make_batches(corpus, vocab, cfg.train.max_tokens, split_seed(shuffle_root, static_cast<uint64_t>(epoch)));
    if (epoch == 0) {
      result.skipped_sentences = epoch_batches.skipped;
      if (epoch_batches.skipped > 0) {
        log_info("skipped %d sentences longer than train.max_tokens=%d", epoch_batches.skipped,
                 cfg.train.max_tokens);
      }
      if (epoch_batches.batches.empty()) {
        throw std::runtime_error("training: no batches (all sentences exceed train.max_tokens?)");
      }
    }
    for (const Batch& batch : epoch_batches.batches) {
      ++step;
      StepMetrics m = train_step(model, batch, opt, sched, cfg.train.label_smoothing,
                                 cfg.train.clip_norm, rngs.dropout, step);
      std::snprintf(row, sizeof(row), "%lld,%.17g,%.17g,%.17g,%lld\n",
                    static_cast<long long>(m.step), m.loss, m.lr, m.grad_norm,
                    static_cast<long long>(m.tokens));
      metrics_csv << row;
      result.final_loss = m.loss;
      result.loss_history.push_back(m.loss);
      log_debug("step %lld loss %.6f lr %.3e", static_cast<long long>(step), m.loss, m.lr);

      if (cfg.train.ckpt_interval > 0 && step % cfg.train.ckpt_interval == 0 &&
          step < cfg.train.max_steps) {
        const std::string path = out_dir + "/ckpt-" + std::to_string(step);
        save_checkpoint(path, snapshot_model(model, config_text, static_cast<uint64_t>(step), &opt));
        result.checkpoint_paths.push_back(path);
      }
      if (step >= cfg.train.max_steps) break;
    }
    ++epoch;
  }

  const std::string final_path = out_dir + "/ckpt-" + std::to_string(step);
  save_checkpoint(final_path, snapshot_model(model, config_text, static_cast<uint64_t>(step), &opt));
  result.checkpoint_paths.push_back(final_path);
  result.final_step = step;
  return result;
}

}  // namespace loopformer
