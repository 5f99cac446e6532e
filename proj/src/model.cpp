#include "loopformer/model.hpp"

#include <cmath>
#include <stdexcept>

namespace loopformer {

void validate_model_config(const ModelConfig& cfg) {
  if (cfg.d_model < 1) throw std::invalid_argument("model: d_model must be positive");
  if (cfg.d_ff < 1) throw std::invalid_argument("model: d_ff must be positive");
  if (cfg.heads < 1 || cfg.d_model % cfg.heads != 0) {
    throw std::invalid_argument("model: heads=" + std::to_string(cfg.heads) +
                                " must divide d_model=" + std::to_string(cfg.d_model));
  }
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) {
    throw std::invalid_argument("model: dropout must be in [0,1)");
  }
  // build_schedule validates N/T/mode combinations
  build_schedule(cfg.enc_mode, cfg.enc_layers, cfg.enc_loops);
  build_schedule(cfg.dec_mode, cfg.dec_layers, cfg.dec_loops);
}

namespace {

Tensor xavier(Shape shape, Rng& rng) {
  const double fan_in = shape[0];
  const double fan_out = shape[shape.size() - 1];
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  return Tensor::rand_uniform(std::move(shape), rng, -a, a, /*requires_grad=*/true);
}

AttentionWeights init_attention(int d, Rng& rng) {
  return {xavier({d, d}, rng), xavier({d, d}, rng), xavier({d, d}, rng), xavier({d, d}, rng)};
}

FfnWeights init_ffn(int d, int ff, Rng& rng) {
  return {xavier({d, ff}, rng), Tensor::zeros({ff}, true), xavier({ff, d}, rng),
          Tensor::zeros({d}, true)};
}

NormWeights init_norm(int d) {
  return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
}

Tensor copy_tensor(const Tensor& t) {
  Tensor c(t.shape(), t.data(), t.requires_grad());
  return c;
}

AttentionWeights copy_weights(const AttentionWeights& w) {
  return {copy_tensor(w.wq), copy_tensor(w.wk), copy_tensor(w.wv), copy_tensor(w.wo)};
}
FfnWeights copy_weights(const FfnWeights& w) {
  return {copy_tensor(w.w1), copy_tensor(w.b1), copy_tensor(w.w2), copy_tensor(w.b2)};
}
NormWeights copy_weights(const NormWeights& w) {
  return {copy_tensor(w.gain), copy_tensor(w.bias)};
}
EncoderLayerWeights copy_weights(const EncoderLayerWeights& w) {
  return {copy_weights(w.ln_attn), copy_weights(w.attn), copy_weights(w.ln_ffn), copy_weights(w.ffn)};
}
DecoderLayerWeights copy_weights(const DecoderLayerWeights& w) {
  return {copy_weights(w.ln_self), copy_weights(w.self_attn), copy_weights(w.ln_cross),
          copy_weights(w.cross_attn), copy_weights(w.ln_ffn), copy_weights(w.ffn)};
}

void push_attention(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                    const AttentionWeights& w) {
  out.emplace_back(prefix + ".wq", w.wq);
  out.emplace_back(prefix + ".wk", w.wk);
  out.emplace_back(prefix + ".wv", w.wv);
  out.emplace_back(prefix + ".wo", w.wo);
}
void push_ffn(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
              const FfnWeights& w) {
  out.emplace_back(prefix + ".w1", w.w1);
  out.emplace_back(prefix + ".b1", w.b1);
  out.emplace_back(prefix + ".w2", w.w2);
  out.emplace_back(prefix + ".b2", w.b2);
}
void push_norm(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
               const NormWeights& w) {
  out.emplace_back(prefix + ".gain", w.gain);
  out.emplace_back(prefix + ".bias", w.bias);
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> RecurrentModel::parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embedding", embedding);
  for (size_t i = 0; i < enc_layers.size(); ++i) {
    const std::string p = "enc." + std::to_string(i);
    push_norm(out, p + ".ln_attn", enc_layers[i].ln_attn);
    push_attention(out, p + ".attn", enc_layers[i].attn);
    push_norm(out, p + ".ln_ffn", enc_layers[i].ln_ffn);
    push_ffn(out, p + ".ffn", enc_layers[i].ffn);
  }
  for (size_t i = 0; i < dec_layers.size(); ++i) {
    const std::string p = "dec." + std::to_string(i);
    push_norm(out, p + ".ln_self", dec_layers[i].ln_self);
    push_attention(out, p + ".self_attn", dec_layers[i].self_attn);
    push_norm(out, p + ".ln_cross", dec_layers[i].ln_cross);
    push_attention(out, p + ".cross_attn", dec_layers[i].cross_attn);
    push_norm(out, p + ".ln_ffn", dec_layers[i].ln_ffn);
    push_ffn(out, p + ".ffn", dec_layers[i].ffn);
  }
  push_norm(out, "enc.final_ln", enc_final_ln);
  push_norm(out, "dec.final_ln", dec_final_ln);
  return out;
}

int64_t RecurrentModel::parameter_total() const {
  int64_t n = 0;
  for (const auto& [name, t] : parameters()) {
    (void)name;
    n += t.numel();
  }
  return n;
}

RecurrentModel init_model(const ModelConfig& cfg, Rng& init_rng) {
  validate_model_config(cfg);
  if (cfg.vocab_size <= Vocab::reserved) {
    throw std::invalid_argument("model: vocab_size must exceed " + std::to_string(Vocab::reserved));
  }
  RecurrentModel m;
  m.config = cfg;
  m.enc_schedule = build_schedule(cfg.enc_mode, cfg.enc_layers, cfg.enc_loops);
  m.dec_schedule = build_schedule(cfg.dec_mode, cfg.dec_layers, cfg.dec_loops);

  const int d = cfg.d_model;
  m.embedding = Tensor::randn({cfg.vocab_size, d}, init_rng, 1.0 / std::sqrt(static_cast<double>(d)),
                              /*requires_grad=*/true);
  const int enc_physical = m.enc_schedule.physical_count();
  const int dec_physical = m.dec_schedule.physical_count();
  for (int i = 0; i < enc_physical; ++i) {
    m.enc_layers.push_back(
        {init_norm(d), init_attention(d, init_rng), init_norm(d), init_ffn(d, cfg.d_ff, init_rng)});
  }
  for (int i = 0; i < dec_physical; ++i) {
    m.dec_layers.push_back({init_norm(d), init_attention(d, init_rng), init_norm(d),
                            init_attention(d, init_rng), init_norm(d),
                            init_ffn(d, cfg.d_ff, init_rng)});
  }
  m.enc_final_ln = init_norm(d);
  m.dec_final_ln = init_norm(d);
  return m;
}

RecurrentModel clone_unshared(const RecurrentModel& model) {
  RecurrentModel c;
  c.config = model.config;
  c.embedding = copy_tensor(model.embedding);
  c.enc_final_ln = copy_weights(model.enc_final_ln);
  c.dec_final_ln = copy_weights(model.dec_final_ln);

  c.enc_schedule = model.enc_schedule;
  c.dec_schedule = model.dec_schedule;
  c.enc_schedule.assignment.clear();
  c.dec_schedule.assignment.clear();
  for (int i = 0; i < model.enc_schedule.virtual_count(); ++i) {
    c.enc_schedule.assignment.push_back(i);
    c.enc_layers.push_back(
        copy_weights(model.enc_layers[static_cast<size_t>(model.enc_schedule.assignment[static_cast<size_t>(i)])]));
  }
  for (int i = 0; i < model.dec_schedule.virtual_count(); ++i) {
    c.dec_schedule.assignment.push_back(i);
    c.dec_layers.push_back(
        copy_weights(model.dec_layers[static_cast<size_t>(model.dec_schedule.assignment[static_cast<size_t>(i)])]));
  }
  return c;
}

ForwardCtx make_ctx(const ModelConfig& cfg, bool training, Rng* dropout_rng) {
  ForwardCtx ctx;
  ctx.heads = cfg.heads;
  ctx.dropout = cfg.dropout;
  ctx.training = training;
  ctx.attn_scale = cfg.attn_scale;
  ctx.rng = dropout_rng;
  return ctx;
}

Tensor embed_sequence(const RecurrentModel& model, const IdMatrix& ids, const ForwardCtx& ctx) {
  Tensor emb = embedding_lookup(model.embedding, ids.v, {ids.rows, ids.cols});
  emb = scale(emb, std::sqrt(static_cast<double>(model.config.d_model)));
  Tensor pe = positional_encoding(ids.cols, model.config.d_model);
  Tensor x = add(emb, reshape(pe, {1, ids.cols, model.config.d_model}));
  return dropout(x, ctx.dropout, ctx.training, ctx.rng);
}

namespace {

// Shared block-recurrence driver: at every block boundary past the first the
// embedded input is re-added (when enabled) before the block's layers run.
template <typename ApplyLayer>
Tensor run_schedule(const LayerSchedule& schedule, const Tensor& x_emb, bool reinjection,
                    ApplyLayer&& apply_layer) {
  Tensor state = x_emb;
  for (int i = 0; i < schedule.virtual_count(); ++i) {
    if (i > 0 && reinjection && schedule.is_boundary(i)) state = add(state, x_emb);
    state = apply_layer(state, schedule.assignment[static_cast<size_t>(i)]);
  }
  return state;
}

}  // namespace

Tensor encoder_forward(const RecurrentModel& model, const Tensor& x_emb, const Tensor& src_mask,
                       const ForwardCtx& ctx) {
  Tensor out = run_schedule(model.enc_schedule, x_emb, model.config.reinjection,
                            [&](const Tensor& s, int w) {
                              return encoder_layer(s, model.enc_layers[static_cast<size_t>(w)],
                                                   src_mask, ctx);
                            });
  return layer_norm(out, model.enc_final_ln.gain, model.enc_final_ln.bias);
}

Tensor decoder_forward(const RecurrentModel& model, const Tensor& y_emb, const Tensor& enc_out,
                       const Tensor& self_mask, const Tensor& cross_mask, const ForwardCtx& ctx) {
  Tensor out = run_schedule(model.dec_schedule, y_emb, model.config.reinjection,
                            [&](const Tensor& s, int w) {
                              return decoder_layer(s, enc_out, model.dec_layers[static_cast<size_t>(w)],
                                                   self_mask, cross_mask, ctx);
                            });
  return layer_norm(out, model.dec_final_ln.gain, model.dec_final_ln.bias);
}

Tensor output_logits(const RecurrentModel& model, const Tensor& dec_states) {
  return matmul(dec_states, transpose(model.embedding, {1, 0}));
}

Tensor forward_logits(const RecurrentModel& model, const Batch& batch, bool training,
                      Rng* dropout_rng) {
  ForwardCtx ctx = make_ctx(model.config, training, dropout_rng);
  Tensor x = embed_sequence(model, batch.src, ctx);
  Tensor z = encoder_forward(model, x, batch.src_mask, ctx);
  Tensor y = embed_sequence(model, batch.tgt_in, ctx);
  Tensor states = decoder_forward(model, y, z, batch.tgt_mask, batch.src_mask, ctx);
  return output_logits(model, states);
}

Tensor forward_loss(const RecurrentModel& model, const Batch& batch, double label_smoothing,
                    bool training, Rng* dropout_rng) {
  Tensor logits = forward_logits(model, batch, training, dropout_rng);
  return label_smoothed_cross_entropy(logits, batch.tgt_out.v, label_smoothing, Vocab::pad_id);
}

ParamBreakdown param_count(const ModelConfig& cfg) {
  validate_model_config(cfg);
  if (cfg.vocab_size <= 0) throw std::invalid_argument("param_count: vocab_size must be set");
  ParamBreakdown b;
  const int64_t d = cfg.d_model, ff = cfg.d_ff, v = cfg.vocab_size;
  b.embedding = v * d;
  const int64_t attn = 4 * d * d;
  const int64_t ffn = d * ff + ff + ff * d + d;
  const int64_t norm = 2 * d;
  b.per_enc_layer = attn + ffn + 2 * norm;
  b.per_dec_layer = 2 * attn + ffn + 3 * norm;
  b.enc_physical_layers =
      cfg.enc_mode == ShareMode::Stacked ? cfg.enc_layers * cfg.enc_loops : cfg.enc_layers;
  b.dec_physical_layers =
      cfg.dec_mode == ShareMode::Stacked ? cfg.dec_layers * cfg.dec_loops : cfg.dec_layers;
  b.encoder = b.per_enc_layer * b.enc_physical_layers;
  b.decoder = b.per_dec_layer * b.dec_physical_layers;
  b.final_norms = 2 * norm;
  b.total = b.embedding + b.encoder + b.decoder + b.final_norms;
  return b;
}

namespace {

double rel_err(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-12});
  return std::fabs(a - b) / denom;
}

std::vector<double> grad_or_zeros(const Tensor& t) {
  if (t.has_grad()) return t.node()->grad;
  return std::vector<double>(static_cast<size_t>(t.numel()), 0.0);
}

}  // namespace

ShareCheckReport shared_gradient_accumulation_check(const RecurrentModel& model, const Batch& batch,
                                                    double tol, double label_smoothing) {
  RecurrentModel clone = clone_unshared(model);

  auto run = [&](const RecurrentModel& m) {
    for (auto& [name, t] : m.parameters()) {
      (void)name;
      t.zero_grad();
    }
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = forward_loss(m, batch, label_smoothing, /*training=*/false, nullptr);
    tape.backward(loss);
  };
  run(model);
  run(clone);

  ShareCheckReport report;
  auto compare_group = [&](const std::string& name, const Tensor& shared,
                           const std::vector<Tensor>& alias_copies) {
    std::vector<double> expected(static_cast<size_t>(shared.numel()), 0.0);
    for (const Tensor& c : alias_copies) {
      auto g = grad_or_zeros(c);
      for (size_t i = 0; i < expected.size(); ++i) expected[i] += g[i];
    }
    auto actual = grad_or_zeros(shared);
    for (size_t i = 0; i < expected.size(); ++i) {
      const double e = rel_err(actual[i], expected[i]);
      report.max_rel_err = std::max(report.max_rel_err, e);
      ++report.compared;
      if (e > tol) {
        report.failures.push_back(name + "[" + std::to_string(i) + "]: shared " +
                                  std::to_string(actual[i]) + " vs clone sum " +
                                  std::to_string(expected[i]));
      }
    }
  };

  for (int p = 0; p < model.enc_schedule.physical_count(); ++p) {
    std::vector<int> aliases;
    for (int i = 0; i < model.enc_schedule.virtual_count(); ++i) {
      if (model.enc_schedule.assignment[static_cast<size_t>(i)] == p) aliases.push_back(i);
    }
    const auto& sw = model.enc_layers[static_cast<size_t>(p)];
    std::vector<std::pair<std::string, Tensor>> shared_slots;
    push_norm(shared_slots, "enc." + std::to_string(p) + ".ln_attn", sw.ln_attn);
    push_attention(shared_slots, "enc." + std::to_string(p) + ".attn", sw.attn);
    push_norm(shared_slots, "enc." + std::to_string(p) + ".ln_ffn", sw.ln_ffn);
    push_ffn(shared_slots, "enc." + std::to_string(p) + ".ffn", sw.ffn);
    for (size_t slot = 0; slot < shared_slots.size(); ++slot) {
      std::vector<Tensor> copies;
      for (int a : aliases) {
        const auto& cw = clone.enc_layers[static_cast<size_t>(a)];
        std::vector<std::pair<std::string, Tensor>> clone_slots;
        push_norm(clone_slots, "x", cw.ln_attn);
        push_attention(clone_slots, "x", cw.attn);
        push_norm(clone_slots, "x", cw.ln_ffn);
        push_ffn(clone_slots, "x", cw.ffn);
        copies.push_back(clone_slots[slot].second);
      }
      compare_group(shared_slots[slot].first, shared_slots[slot].second, copies);
    }
  }
  for (int p = 0; p < model.dec_schedule.physical_count(); ++p) {
    std::vector<int> aliases;
    for (int i = 0; i < model.dec_schedule.virtual_count(); ++i) {
      if (model.dec_schedule.assignment[static_cast<size_t>(i)] == p) aliases.push_back(i);
    }
    const auto& sw = model.dec_layers[static_cast<size_t>(p)];
    std::vector<std::pair<std::string, Tensor>> shared_slots;
    push_norm(shared_slots, "dec." + std::to_string(p) + ".ln_self", sw.ln_self);
    push_attention(shared_slots, "dec." + std::to_string(p) + ".self_attn", sw.self_attn);
    push_norm(shared_slots, "dec." + std::to_string(p) + ".ln_cross", sw.ln_cross);
    push_attention(shared_slots, "dec." + std::to_string(p) + ".cross_attn", sw.cross_attn);
    push_norm(shared_slots, "dec." + std::to_string(p) + ".ln_ffn", sw.ln_ffn);
    push_ffn(shared_slots, "dec." + std::to_string(p) + ".ffn", sw.ffn);
    for (size_t slot = 0; slot < shared_slots.size(); ++slot) {
      std::vector<Tensor> copies;
      for (int a : aliases) {
        const auto& cw = clone.dec_layers[static_cast<size_t>(a)];
        std::vector<std::pair<std::string, Tensor>> clone_slots;
        push_norm(clone_slots, "x", cw.ln_self);
        push_attention(clone_slots, "x", cw.self_attn);
        push_norm(clone_slots, "x", cw.ln_cross);
        push_attention(clone_slots, "x", cw.cross_attn);
        push_norm(clone_slots, "x", cw.ln_ffn);
        push_ffn(clone_slots, "x", cw.ffn);
        copies.push_back(clone_slots[slot].second);
      }
      compare_group(shared_slots[slot].first, shared_slots[slot].second, copies);
    }
  }
  // The tied embedding and final norms are singly-aliased between the two
  // models; their gradients must agree as well.
  compare_group("embedding", model.embedding, {clone.embedding});
  compare_group("enc.final_ln.gain", model.enc_final_ln.gain, {clone.enc_final_ln.gain});
  compare_group("enc.final_ln.bias", model.enc_final_ln.bias, {clone.enc_final_ln.bias});
  compare_group("dec.final_ln.gain", model.dec_final_ln.gain, {clone.dec_final_ln.gain});
  compare_group("dec.final_ln.bias", model.dec_final_ln.bias, {clone.dec_final_ln.bias});

  report.ok = report.failures.empty();
  return report;
}

}  // namespace loopformer
