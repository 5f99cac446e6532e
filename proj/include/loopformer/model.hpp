#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "loopformer/data.hpp"
#include "loopformer/schedule.hpp"
#include "loopformer/transformer.hpp"

namespace loopformer {

struct ModelConfig {
  int d_model = 64;
  int d_ff = 128;
  int heads = 2;
  int enc_layers = 2;  // N, physical layers per block
  int dec_layers = 2;
  ShareMode enc_mode = ShareMode::Stacked;
  ShareMode dec_mode = ShareMode::Stacked;
  int enc_loops = 1;  // T
  int dec_loops = 1;
  double dropout = 0.1;
  bool reinjection = true;
  AttnScale attn_scale = AttnScale::InvSqrtHeadDim;
  int vocab_size = 0;
};

// Throws std::invalid_argument on any violated precondition.
void validate_model_config(const ModelConfig& cfg);

// Source/target embedding and the output projection share one [V, d_model]
// matrix. Encoder/decoder layer lists hold the *physical* weights; the
// schedules expand them into the virtual depth sequence.
struct RecurrentModel {
  ModelConfig config;
  Tensor embedding;
  std::vector<EncoderLayerWeights> enc_layers;
  std::vector<DecoderLayerWeights> dec_layers;
  NormWeights enc_final_ln;
  NormWeights dec_final_ln;
  LayerSchedule enc_schedule;
  LayerSchedule dec_schedule;

  // All trainable tensors with stable names, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> parameters() const;
  int64_t parameter_total() const;
};

RecurrentModel init_model(const ModelConfig& cfg, Rng& init_rng);

// Same virtual depth sequence and block boundaries, but every virtual layer
// gets its own physical copy of the weights it aliased.
RecurrentModel clone_unshared(const RecurrentModel& model);

ForwardCtx make_ctx(const ModelConfig& cfg, bool training, Rng* dropout_rng);

// Scaled embedding + sinusoidal positions + dropout. This is the sequence
// that gets re-injected at block boundaries.
Tensor embed_sequence(const RecurrentModel& model, const IdMatrix& ids, const ForwardCtx& ctx);

// Runs the virtual layer sequence: at every block boundary after the first,
// the embedded input is added back onto the running state (if re-injection is
// enabled); a final layer norm closes the stack.
Tensor encoder_forward(const RecurrentModel& model, const Tensor& x_emb, const Tensor& src_mask,
                       const ForwardCtx& ctx);

// Same block-recurrent structure on the target side. Every virtual layer
// cross-attends to the final encoder output. Returns pre-projection states.
Tensor decoder_forward(const RecurrentModel& model, const Tensor& y_emb, const Tensor& enc_out,
                       const Tensor& self_mask, const Tensor& cross_mask, const ForwardCtx& ctx);

// states x embedding^T
Tensor output_logits(const RecurrentModel& model, const Tensor& dec_states);

Tensor forward_logits(const RecurrentModel& model, const Batch& batch, bool training,
                      Rng* dropout_rng);
Tensor forward_loss(const RecurrentModel& model, const Batch& batch, double label_smoothing,
                    bool training, Rng* dropout_rng);

struct ParamBreakdown {
  int64_t embedding = 0;
  int enc_physical_layers = 0;
  int dec_physical_layers = 0;
  int64_t per_enc_layer = 0;
  int64_t per_dec_layer = 0;
  int64_t encoder = 0;
  int64_t decoder = 0;
  int64_t final_norms = 0;
  int64_t total = 0;
};

// Exact integer parameter accounting from the config alone (no tensors
// allocated). Independent of T in the sharing modes.
ParamBreakdown param_count(const ModelConfig& cfg);

struct ShareCheckReport {
  double max_rel_err = 0.0;
  int compared = 0;
  bool ok = false;
  std::vector<std::string> failures;
};

// For every physical weight, the gradient in the shared model must equal the
// sum over its aliased virtual layers in an unshared clone with identical
// values. Dropout is off for the comparison.
ShareCheckReport shared_gradient_accumulation_check(const RecurrentModel& model, const Batch& batch,
                                                    double tol = 1e-10,
                                                    double label_smoothing = 0.1);

}  // namespace loopformer
