#pragma once

// The montage-invariant sequence-to-sequence sleep stager: frequency
// reduction, multi-head attentive channel recombination, a frame-level
// bidirectional GRU with attentive pooling per epoch, a two-layer
// bidirectional sequence GRU with skip connections, and a softmax classifier.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sleepnet/common.hpp"
#include "sleepnet/dsp.hpp"
#include "sleepnet/layers.hpp"
#include "sleepnet/tensor.hpp"

namespace sleepnet {

struct ModelConfig {
  std::int64_t temporal_context = 21;      // T, epochs classified jointly
  std::int64_t epoch_samples = 1800;       // L, samples per epoch at the target rate
  std::int64_t n_fft = 128;
  std::int64_t n_stride = 60;
  std::int64_t freq_bins_reduced = 32;     // F_red
  std::int64_t n_heads = 4;
  std::int64_t channel_attention_size = 30;  // K1
  std::int64_t epoch_gru_hidden = 64;        // H1
  double epoch_dropout = 0.5;                // p1
  std::int64_t epoch_features = 50;          // P
  std::int64_t frame_attention_size = 25;    // K2
  std::int64_t seq_gru_hidden = 50;          // H2
  double seq_dropout = 0.5;                  // p2
  std::int64_t n_classes = 5;

  std::int64_t f_fft() const { return n_fft / 2 + 1; }
  std::int64_t l_fft() const { return (epoch_samples - n_fft) / n_stride; }
  void validate() const;
};

// Every trainable tensor of the model.
//
// Parameter-count conventions (180,143 at the default configuration):
//  - GRUs carry separate input and recurrent biases, 3*(H*(in+H) + 2H) per
//    direction.
//  - Attention layers carry W [K x d], b [K] and the context vector u [K].
//  - The sequence encoder concatenates each layer's input with its output
//    before the next layer; the classifier reads only the second layer's
//    output, so its input width is Q = 2 * H2.
template <typename Real>
struct ModelParameters {
  ModelConfig config;

  LinearLayer<Real> freq_reduce;                     // F_fft -> F_red
  std::vector<AttentionLayer<Real>> channel_heads;   // N_heads of them, d = F_red
  GruLayer<Real> epoch_gru;                          // N_heads*F_red -> H1, bidirectional
  LinearLayer<Real> frame_proj;                      // 2*H1 -> P
  AttentionLayer<Real> frame_attention;              // d = P, K2
  GruLayer<Real> seq_gru1;                           // P -> H2, bidirectional
  GruLayer<Real> seq_gru2;                           // P + 2*H2 -> H2, bidirectional
  LinearLayer<Real> classifier;                      // 2*H2 -> n_classes

  static ModelParameters init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelParameters p;
    p.config = cfg;
    p.freq_reduce = LinearLayer<Real>::create(cfg.f_fft(), cfg.freq_bins_reduced, rng);
    for (std::int64_t h = 0; h < cfg.n_heads; ++h)
      p.channel_heads.push_back(
          AttentionLayer<Real>::create(cfg.freq_bins_reduced, cfg.channel_attention_size, rng));
    p.epoch_gru = GruLayer<Real>::create(cfg.n_heads * cfg.freq_bins_reduced, cfg.epoch_gru_hidden,
                                         true, rng);
    p.frame_proj = LinearLayer<Real>::create(2 * cfg.epoch_gru_hidden, cfg.epoch_features, rng);
    p.frame_attention =
        AttentionLayer<Real>::create(cfg.epoch_features, cfg.frame_attention_size, rng);
    p.seq_gru1 = GruLayer<Real>::create(cfg.epoch_features, cfg.seq_gru_hidden, true, rng);
    p.seq_gru2 = GruLayer<Real>::create(cfg.epoch_features + 2 * cfg.seq_gru_hidden,
                                        cfg.seq_gru_hidden, true, rng);
    p.classifier = LinearLayer<Real>::create(2 * cfg.seq_gru_hidden, cfg.n_classes, rng);
    return p;
  }

  // Enumerates parameters in a fixed order (also the serialization order).
  template <typename Fn>
  void visit(Fn&& fn) {
    fn("freq_reduce.weight", freq_reduce.weight);
    fn("freq_reduce.bias", freq_reduce.bias);
    for (std::size_t h = 0; h < channel_heads.size(); ++h) {
      const std::string prefix = "channel_head." + std::to_string(h) + ".";
      fn(prefix + "weight", channel_heads[h].weight);
      fn(prefix + "bias", channel_heads[h].bias);
      fn(prefix + "context", channel_heads[h].context_vector);
    }
    auto visit_gru = [&](const std::string& name, GruLayer<Real>& g) {
      const char* dir_names[2] = {"fwd", "bwd"};
      for (std::size_t d = 0; d < g.directions.size(); ++d) {
        const std::string prefix = name + "." + dir_names[d] + ".";
        fn(prefix + "w_ih", g.directions[d].w_ih);
        fn(prefix + "w_hh", g.directions[d].w_hh);
        fn(prefix + "b_ih", g.directions[d].b_ih);
        fn(prefix + "b_hh", g.directions[d].b_hh);
      }
    };
    visit_gru("epoch_gru", epoch_gru);
    fn("frame_proj.weight", frame_proj.weight);
    fn("frame_proj.bias", frame_proj.bias);
    fn("frame_attention.weight", frame_attention.weight);
    fn("frame_attention.bias", frame_attention.bias);
    fn("frame_attention.context", frame_attention.context_vector);
    visit_gru("seq_gru1", seq_gru1);
    visit_gru("seq_gru2", seq_gru2);
    fn("classifier.weight", classifier.weight);
    fn("classifier.bias", classifier.bias);
  }

  template <typename Fn>
  void visit(Fn&& fn) const {
    const_cast<ModelParameters*>(this)->visit(
        [&](const std::string& name, Tensor<Real>& t) { fn(name, static_cast<const Tensor<Real>&>(t)); });
  }

  // Deep copy whose tensors are fresh leaves (gradients accumulate there).
  ModelParameters clone() const {
    ModelParameters out = *this;
    out.visit([](const std::string&, Tensor<Real>& t) { t = t.clone(true); });
    return out;
  }

  std::int64_t n_parameters() const {
    std::int64_t n = 0;
    visit([&](const std::string&, const Tensor<Real>& t) { n += t.size(); });
    return n;
  }

  std::vector<Real> flat_values() const {
    std::vector<Real> out;
    out.reserve(static_cast<std::size_t>(n_parameters()));
    visit([&](const std::string&, const Tensor<Real>& t) {
      out.insert(out.end(), t.data().begin(), t.data().end());
    });
    return out;
  }

  void set_flat_values(std::span<const Real> values) {
    std::size_t off = 0;
    visit([&](const std::string&, Tensor<Real>& t) {
      if (off + static_cast<std::size_t>(t.size()) > values.size())
        throw ContractError("set_flat_values: vector too short");
      std::copy(values.begin() + static_cast<std::ptrdiff_t>(off),
                values.begin() + static_cast<std::ptrdiff_t>(off + static_cast<std::size_t>(t.size())),
                t.data().begin());
      off += static_cast<std::size_t>(t.size());
    });
    if (off != values.size()) throw ContractError("set_flat_values: vector too long");
  }

  // Gradients in visit order; zeros where a tensor has no gradient yet.
  std::vector<Real> flat_grads() const {
    std::vector<Real> out;
    out.reserve(static_cast<std::size_t>(n_parameters()));
    visit([&](const std::string&, const Tensor<Real>& t) {
      auto g = t.grad();
      if (g.empty())
        out.insert(out.end(), static_cast<std::size_t>(t.size()), Real(0));
      else
        out.insert(out.end(), g.begin(), g.end());
    });
    return out;
  }

  void zero_grads() {
    visit([](const std::string&, Tensor<Real>& t) { t.zero_grad(); });
  }
};

template <typename Real>
std::int64_t count_parameters(const ModelParameters<Real>& params) {
  return params.n_parameters();
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

namespace detail {

// Recombines C channels into one channel per attention head.
// x_rows : [(T*C*Lf) x F_red], rows ordered (epoch, channel, frame).
// result : [(T*Lf) x (heads*F_red)], rows ordered (epoch, frame).
template <typename Real>
Tensor<Real> recombine_heads(const Tensor<Real>& x_rows,
                             const std::vector<AttentionLayer<Real>>& heads, std::int64_t T,
                             std::int64_t C, std::int64_t Lf) {
  if (C < 1) throw ContractError("recombine: no channels");
  const std::int64_t F = x_rows.dim(1);
  // one descriptor per (epoch, channel): the frame-averaged feature vector
  auto descriptors = reduce_mean(x_rows.reshape({T * C, Lf, F}), 1);  // [(T*C) x F]
  auto x_batched = x_rows.reshape({T, C, Lf * F});

  std::vector<Tensor<Real>> head_outputs;
  head_outputs.reserve(heads.size());
  for (const auto& head : heads) {
    auto weights = softmax(head.scores(descriptors).reshape({T, C}), 1);  // [T x C]
    auto mixed = bmm(weights.reshape({T, 1, C}), x_batched);              // [T x 1 x Lf*F]
    head_outputs.push_back(mixed.reshape({T * Lf, F}));
  }
  return concat(head_outputs, 1);
}

}  // namespace detail

// Spec-shaped channel recombination: [C x F_red x L_fft] -> [N_heads x F_red x L_fft].
template <typename Real>
Tensor<Real> channel_recombine(const Tensor<Real>& x,
                               const std::vector<AttentionLayer<Real>>& heads) {
  if (x.rank() != 3) throw DimensionError("channel_recombine: expected [C x F x L], got " +
                                          shape_to_string(x.shape()));
  const std::int64_t C = x.dim(0), F = x.dim(1), Lf = x.dim(2);
  if (C < 1) throw ContractError("channel_recombine: no channels");
  // to rows (channel, frame) x F
  auto x2d = x.reshape({C * F, Lf});
  std::vector<Tensor<Real>> per_channel;
  for (std::int64_t c = 0; c < C; ++c) per_channel.push_back(transpose(row_block(x2d, c * F, F)));
  auto rows = concat(per_channel, 0);  // [(C*Lf) x F]

  auto mixed = detail::recombine_heads(rows, heads, 1, C, Lf);  // [Lf x heads*F]
  const auto n_heads = static_cast<std::int64_t>(heads.size());
  std::vector<Tensor<Real>> out_heads;
  for (std::int64_t h = 0; h < n_heads; ++h)
    out_heads.push_back(transpose(col_block(mixed, h * F, F)));  // [F x Lf]
  return concat(out_heads, 0).reshape({n_heads, F, Lf});
}

// Epoch encoder over a whole temporal context at once.
// x_rows : [(T*C*Lf) x F_fft], rows ordered (epoch, channel, frame).
// result : [T x P].
template <typename Real>
Tensor<Real> epoch_encode_batch(const Tensor<Real>& x_rows, const ModelParameters<Real>& params,
                                std::int64_t T, std::int64_t C, bool train, Rng* rng) {
  const auto& cfg = params.config;
  const std::int64_t Lf = x_rows.dim(0) / (T * C);
  if (x_rows.dim(0) != T * C * Lf || x_rows.dim(1) != cfg.f_fft())
    throw DimensionError("epoch_encode: input " + shape_to_string(x_rows.shape()) +
                         " does not match the configuration");

  auto x_red = params.freq_reduce.forward(x_rows);  // [(T*C*Lf) x F_red]
  auto x_flat = detail::recombine_heads(x_red, params.channel_heads, T, C, Lf);
  // frames become the sequence axis, epochs the batch axis
  auto seq = transpose_01(x_flat.reshape({T, Lf, cfg.n_heads * cfg.freq_bins_reduced}));
  auto gru_out = gru_forward(params.epoch_gru, seq, cfg.epoch_dropout, train, rng);
  auto proj = params.frame_proj.forward(gru_out);  // [Lf x T x P]

  auto scores = params.frame_attention.scores(proj.reshape({Lf * T, cfg.epoch_features}));
  auto weights = softmax(scores.reshape({Lf, T}), 0);  // one distribution over frames per epoch
  auto pooled = bmm(transpose(weights).reshape({T, 1, Lf}), transpose_01(proj));
  return pooled.reshape({T, cfg.epoch_features});
}

// Spec-shaped epoch encoder: normalized [C x F_fft x L_fft] -> [P].
template <typename Real>
Tensor<Real> epoch_encode(const Tensor<Real>& spec, const ModelParameters<Real>& params, bool train,
                          Rng* rng = nullptr) {
  if (spec.rank() != 3) throw DimensionError("epoch_encode: expected [C x F x L], got " +
                                             shape_to_string(spec.shape()));
  const std::int64_t C = spec.dim(0), F = spec.dim(1), Lf = spec.dim(2);
  auto x2d = spec.reshape({C * F, Lf});
  std::vector<Tensor<Real>> per_channel;
  for (std::int64_t c = 0; c < C; ++c) per_channel.push_back(transpose(row_block(x2d, c * F, F)));
  auto rows = concat(per_channel, 0);  // [(C*Lf) x F]
  return epoch_encode_batch(rows, params, 1, C, train, rng).reshape({params.config.epoch_features});
}

// Sequence encoder + classifier: [T x P] -> probabilities [n_classes x T].
template <typename Real>
Tensor<Real> classify_sequence(const Tensor<Real>& features, const ModelParameters<Real>& params,
                               bool train, Rng* rng) {
  const auto& cfg = params.config;
  const std::int64_t T = features.dim(0);
  auto l1_out = gru_forward(params.seq_gru1, features.reshape({T, 1, cfg.epoch_features}), 0.0,
                            train, rng)
                    .reshape({T, 2 * cfg.seq_gru_hidden});
  if (train && cfg.seq_dropout > 0.0) l1_out = dropout_apply(l1_out, cfg.seq_dropout, train, *rng);
  auto l2_in = concat<Real>({features, l1_out}, 1);  // skip connection
  auto l2_out = gru_forward(params.seq_gru2,
                            l2_in.reshape({T, 1, cfg.epoch_features + 2 * cfg.seq_gru_hidden}), 0.0,
                            train, rng)
                    .reshape({T, 2 * cfg.seq_gru_hidden});
  if (train && cfg.seq_dropout > 0.0) l2_out = dropout_apply(l2_out, cfg.seq_dropout, train, *rng);
  auto logits = params.classifier.forward(l2_out);  // [T x n_classes]
  return transpose(softmax(logits, 1));             // [n_classes x T]
}

// Full forward from a normalized spectrogram context -> [n_classes x T].
template <typename Real>
Tensor<Real> model_forward_context(const SpectrogramContext& ctx,
                                   const ModelParameters<Real>& params, bool train,
                                   Rng* rng = nullptr) {
  const auto& cfg = params.config;
  if (ctx.n_channels < 1) throw ContractError("model: context has no channels");
  if (ctx.n_bins != cfg.f_fft() || ctx.n_frames != cfg.l_fft())
    throw DimensionError("model: context bins/frames do not match the configuration");
  if (train && ctx.n_epochs != cfg.temporal_context)
    throw ContractError("model: training windows must span " +
                        std::to_string(cfg.temporal_context) + " epochs, got " +
                        std::to_string(ctx.n_epochs));
  if (train && !rng) throw ContractError("model: training forward needs a random stream");

  std::vector<Real> data(ctx.values.begin(), ctx.values.end());
  auto x = Tensor<Real>::from({ctx.n_epochs * ctx.n_channels * ctx.n_frames, ctx.n_bins},
                              std::move(data));
  auto features = epoch_encode_batch(x, params, ctx.n_epochs, ctx.n_channels, train, rng);
  return classify_sequence(features, params, train, rng);
}

// Full forward from preprocessed raw signals. `signals` holds one vector per
// channel with T concatenated epochs of L samples at the target rate.
template <typename Real>
Tensor<Real> model_forward(const std::vector<std::vector<float>>& signals,
                           const ModelParameters<Real>& params, bool train, Rng* rng = nullptr) {
  const auto& cfg = params.config;
  if (signals.empty()) throw ContractError("model: no channels");
  const auto C = static_cast<std::int64_t>(signals.size());
  const std::int64_t L = cfg.epoch_samples;
  const std::int64_t T = static_cast<std::int64_t>(signals[0].size()) / L;
  if (T < 1 || static_cast<std::int64_t>(signals[0].size()) != T * L)
    throw DimensionError("model: signals must hold whole epochs of " + std::to_string(L) +
                         " samples");
  for (const auto& s : signals)
    if (s.size() != signals[0].size())
      throw DimensionError("model: channels disagree on signal length");

  const StftPlan plan(cfg.n_fft, cfg.n_stride);
  SpectrogramContext ctx;
  ctx.n_epochs = T;
  ctx.n_channels = C;
  ctx.n_bins = cfg.f_fft();
  ctx.n_frames = cfg.l_fft();
  ctx.values.assign(static_cast<std::size_t>(ctx.size()), 0.0f);
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t t = 0; t < T; ++t) {
      const Spectrogram spec =
          plan.run(std::span<const float>(signals[static_cast<std::size_t>(c)].data() + t * L,
                                          static_cast<std::size_t>(L)));
      for (std::int64_t bin = 0; bin < ctx.n_bins; ++bin)
        for (std::int64_t f = 0; f < ctx.n_frames; ++f)
          ctx.at(t, c, f, bin) = spec.at(bin, f);
    }
  normalize_context(ctx);
  return model_forward_context(ctx, params, train, rng);
}

// ---------------------------------------------------------------------------
// Channel sampling for mixed-montage training
// ---------------------------------------------------------------------------

// Draws the per-batch channel count: P(n) = 1 / (n * H_{c_max}) where H is the
// harmonic number. Smaller counts are favored.
std::int64_t sample_channel_count(std::int64_t c_max, Rng& rng);

// Probability table for the sampler (exposed for tests and reports).
std::vector<double> channel_count_probabilities(std::int64_t c_max);

// Uniform channel pick: without replacement when c_batch <= n_channels,
// with replacement otherwise.
std::vector<std::int64_t> select_channels(std::int64_t n_channels, std::int64_t c_batch, Rng& rng);

}  // namespace sleepnet
