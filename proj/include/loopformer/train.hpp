#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "loopformer/checkpoint.hpp"
#include "loopformer/config.hpp"
#include "loopformer/model.hpp"

namespace loopformer {

// Inverse-square-root schedule with linear warmup:
//   lr(step) = scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)
// Both branches meet at step == warmup_steps.
struct LrSchedule {
  int d_model = 512;
  int warmup_steps = 16000;
  double scale = 1.0;

  double at(int64_t step) const;  // step >= 1
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

// Bias-corrected Adam over a fixed parameter list. Shared parameters are
// physical: each tensor is updated once from its accumulated gradient.
class Adam {
 public:
  explicit Adam(std::vector<std::pair<std::string, Tensor>> params, AdamOptions opt = {});

  void step(double lr);

  uint64_t steps_taken() const { return t_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
  const std::vector<std::vector<double>>& moment1() const { return m_; }
  const std::vector<std::vector<double>>& moment2() const { return v_; }
  void restore(uint64_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<double>> m_, v_;
  uint64_t t_ = 0;
  AdamOptions opt_;
};

void zero_grads(const std::vector<std::pair<std::string, Tensor>>& params);
double grad_global_norm(const std::vector<std::pair<std::string, Tensor>>& params);

struct StepMetrics {
  int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  int64_t tokens = 0;
};

// forward -> loss -> backward -> (optional clip) -> Adam. Throws on a
// non-finite loss, naming the step.
StepMetrics train_step(const RecurrentModel& model, const Batch& batch, Adam& opt,
                       const LrSchedule& sched, double label_smoothing, double clip_norm,
                       Rng& dropout_rng, int64_t step);

Checkpoint snapshot_model(const RecurrentModel& model, const std::string& config_text,
                          uint64_t step, const Adam* opt);

struct TrainRunResult {
  int64_t final_step = 0;
  double final_loss = 0.0;
  std::vector<double> loss_history;
  std::vector<std::string> checkpoint_paths;
  int skipped_sentences = 0;
};

// Full training run: per-epoch deterministic batch shuffling, metrics CSV
// (step,loss,lr,grad_norm,tokens_per_step), periodic + final checkpoints, all
// under out_dir. `model` must be initialized for `vocab`.
TrainRunResult run_training(const RunConfig& cfg, RecurrentModel& model,
                            const ParallelCorpus& corpus, const Vocab& vocab,
                            const std::string& out_dir);

}  // namespace loopformer
