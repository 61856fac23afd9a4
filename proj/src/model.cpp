#include "adasit/model.hpp"

#include "adasit/error.hpp"
#include "adasit/kernels.hpp"
#include "adasit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace adasit {

using nlohmann::json;

void validate(const ModelConfig& c) {
  if (c.event_types < 1) throw Error("model needs at least one event type");
  if (c.embed_dim < 1) throw Error("embedding dimension must be at least 1");
  if (c.hidden_dim < 1) throw Error("hidden dimension must be at least 1");
  if (!(c.init_scale > 0.0) || !std::isfinite(c.init_scale)) throw Error("init scale must be positive");
  if (!std::isfinite(c.forget_bias)) throw Error("forget bias must be finite");
}

json to_json(const ModelConfig& c) {
  return json{{"event_types", c.event_types}, {"categorical_values", c.categorical_values},
              {"numeric_dims", c.numeric_dims}, {"embed_dim", c.embed_dim},
              {"hidden_dim", c.hidden_dim},     {"init_scale", c.init_scale},
              {"forget_bias", c.forget_bias}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  if (!j.is_object()) throw Error("model: expected an object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "event_types") {
        c.event_types = value.get<std::size_t>();
      } else if (key == "categorical_values") {
        c.categorical_values = value.get<std::size_t>();
      } else if (key == "numeric_dims") {
        c.numeric_dims = value.get<std::size_t>();
      } else if (key == "embed_dim") {
        c.embed_dim = value.get<std::size_t>();
      } else if (key == "hidden_dim") {
        c.hidden_dim = value.get<std::size_t>();
      } else if (key == "init_scale") {
        c.init_scale = value.get<double>();
      } else if (key == "forget_bias") {
        c.forget_bias = value.get<double>();
      } else {
        throw Error("model: unknown field '" + key + "'");
      }
    } catch (const json::exception& ex) {
      throw Error("model." + key + ": " + ex.what());
    }
  }
  validate(c);
  return c;
}

std::uint64_t config_hash(const ModelConfig& c) { return fnv1a(to_json(c).dump()); }

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.embed_dim, h = c.hidden_dim;
  return (c.event_types + c.categorical_values) * d + d * c.numeric_dims + 4 * h * (d + h + 1) + h + 1;
}

ModelConfig model_config_for(const Vocabulary& vocab, std::size_t embed_dim, std::size_t hidden_dim) {
  ModelConfig c;
  c.event_types = vocab.event_types.size();
  c.categorical_values = vocab.categorical_values.size();
  c.numeric_dims = vocab.numeric_dims;
  c.embed_dim = embed_dim;
  c.hidden_dim = hidden_dim;
  return c;
}

double cross_entropy(double p, int label) noexcept {
  const double q = std::clamp(p, Backbone::kProbClamp, 1.0 - Backbone::kProbClamp);
  return label == 1 ? -std::log(q) : -std::log(1.0 - q);
}

namespace {

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Keeps a probability representable strictly inside (0, 1).
inline double open_unit(double p) noexcept {
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
  return std::clamp(p, lo, hi);
}

}  // namespace

Backbone::Backbone(const ModelConfig& config) : config_(config) {
  validate(config_);
  const std::size_t d = config_.embed_dim, h = config_.hidden_dim;
  layout_ = std::make_shared<const ParamLayout>(
      std::vector<ParamBlock>{
          {"type_embedding", 0, config_.event_types, d},
          {"categorical_embedding", 0, config_.categorical_values, d},
          {"numeric_projection", 0, d, config_.numeric_dims},
          {"lstm_input_weights", 0, 4 * h, d},
          {"lstm_recurrent_weights", 0, 4 * h, h},
          {"lstm_bias", 0, 4 * h, 1},
          {"output_weights", 0, h, 1},
          {"output_bias", 0, 1, 1},
      },
      config_hash(config_));
  const auto& b = layout_->blocks();
  blocks_ = Blocks{b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]};
}

ParamVector Backbone::init_params(std::uint64_t seed) const {
  ParamVector p(layout_);
  Rng rng(seed);
  for (double& v : p.values()) v = uniform(rng, -config_.init_scale, config_.init_scale);
  auto bias = p.block(blocks_.bias);
  const std::size_t h = config_.hidden_dim;
  for (std::size_t k = h; k < 2 * h; ++k) bias[k] += config_.forget_bias;
  return p;
}

void Backbone::check_params(const ParamVector& params) const {
  if (!params.layout_ptr() || (params.layout_ptr() != layout_ && !(params.layout() == *layout_))) {
    throw Error("parameter vector does not match the model layout");
  }
}

void Backbone::check_event(const EventRecord& e) const {
  if (e.event_type >= config_.event_types) {
    throw Error("event type index " + std::to_string(e.event_type) + " out of vocabulary range");
  }
  for (auto c : e.categorical) {
    if (c >= config_.categorical_values) {
      throw Error("categorical index " + std::to_string(c) + " out of vocabulary range");
    }
  }
  if (e.numeric.size() != config_.numeric_dims) {
    throw Error("event has " + std::to_string(e.numeric.size()) + " numeric values, model expects " +
                std::to_string(config_.numeric_dims));
  }
}

void Backbone::embed_into(const ParamVector& params, const EventRecord& e, std::span<double> x) const {
  const std::size_t d = config_.embed_dim;
  const auto type_emb = params.block(blocks_.type_emb);
  const auto cat_emb = params.block(blocks_.cat_emb);
  std::copy_n(type_emb.begin() + static_cast<std::ptrdiff_t>(e.event_type * d), d, x.begin());
  for (auto c : e.categorical) kernels::axpy(1.0, cat_emb.subspan(c * d, d), x);
  if (config_.numeric_dims > 0) {
    kernels::gemv_acc(params.block(blocks_.num_proj), d, config_.numeric_dims, e.numeric, x);
  }
}

std::vector<double> Backbone::embed_event(const ParamVector& params, const EventRecord& event) const {
  check_params(params);
  check_event(event);
  std::vector<double> x(config_.embed_dim);
  embed_into(params, event, x);
  return x;
}

double Backbone::forward(const ParamVector& params, const EpisodeSample& sample) const {
  check_params(params);
  if (sample.events.empty()) throw Error("forward: episode has no events");
  const std::size_t d = config_.embed_dim, h = config_.hidden_dim;
  const auto w_in = params.block(blocks_.w_in);
  const auto w_rec = params.block(blocks_.w_rec);
  const auto bias = params.block(blocks_.bias);

  std::vector<double> x(d), z(4 * h), hs(h, 0.0), cs(h, 0.0);
  for (const auto& e : sample.events) {
    check_event(e);
    embed_into(params, e, x);
    std::copy(bias.begin(), bias.end(), z.begin());
    kernels::gemv_acc(w_in, 4 * h, d, x, z);
    kernels::gemv_acc(w_rec, 4 * h, h, hs, z);
    for (std::size_t k = 0; k < h; ++k) {
      const double i = sigmoid(z[k]);
      const double f = sigmoid(z[h + k]);
      const double g = std::tanh(z[2 * h + k]);
      const double o = sigmoid(z[3 * h + k]);
      cs[k] = f * cs[k] + i * g;
      hs[k] = o * std::tanh(cs[k]);
    }
  }
  const double logit = kernels::dot(params.block(blocks_.w_out), hs) + params.block(blocks_.b_out)[0];
  return open_unit(sigmoid(logit));
}

double Backbone::loss(const ParamVector& params, SampleBatch batch) const {
  if (batch.empty()) throw Error("loss: empty batch");
  double total = 0.0;
  for (const EpisodeSample* s : batch) total += cross_entropy(forward(params, *s), s->label);
  return total;
}

double Backbone::accumulate_sample(const ParamVector& params, const EpisodeSample& sample, ParamVector& grad) const {
  if (sample.events.empty()) throw Error("loss_grad: episode has no events");
  const std::size_t d = config_.embed_dim, h = config_.hidden_dim, g4 = 4 * h;
  const std::size_t n_num = config_.numeric_dims;
  const std::size_t steps = sample.events.size();
  const auto w_in = params.block(blocks_.w_in);
  const auto w_rec = params.block(blocks_.w_rec);
  const auto bias = params.block(blocks_.bias);

  // Per-step caches. gates holds activated (i, f, g, o); h/c are offset by one
  // step so index 0 is the zero initial state.
  std::vector<double> xs(steps * d), gates(steps * g4), hs((steps + 1) * h, 0.0), cs((steps + 1) * h, 0.0),
      tanh_c(steps * h);
  std::vector<double> z(g4);
  for (std::size_t t = 0; t < steps; ++t) {
    const auto& e = sample.events[t];
    check_event(e);
    const std::span<double> x(xs.data() + t * d, d);
    embed_into(params, e, x);
    std::copy(bias.begin(), bias.end(), z.begin());
    kernels::gemv_acc(w_in, g4, d, x, z);
    kernels::gemv_acc(w_rec, g4, h, std::span<const double>(hs.data() + t * h, h), z);
    double* gt = gates.data() + t * g4;
    const double* c_prev = cs.data() + t * h;
    double* c_now = cs.data() + (t + 1) * h;
    double* h_now = hs.data() + (t + 1) * h;
    for (std::size_t k = 0; k < h; ++k) {
      gt[k] = sigmoid(z[k]);
      gt[h + k] = sigmoid(z[h + k]);
      gt[2 * h + k] = std::tanh(z[2 * h + k]);
      gt[3 * h + k] = sigmoid(z[3 * h + k]);
      c_now[k] = gt[h + k] * c_prev[k] + gt[k] * gt[2 * h + k];
      tanh_c[t * h + k] = std::tanh(c_now[k]);
      h_now[k] = gt[3 * h + k] * tanh_c[t * h + k];
    }
  }
  const auto w_out = params.block(blocks_.w_out);
  const std::span<const double> h_last(hs.data() + steps * h, h);
  const double p = sigmoid(kernels::dot(w_out, h_last) + params.block(blocks_.b_out)[0]);
  const double loss = cross_entropy(p, sample.label);

  // d(CE)/d(logit); zero where the clamp is active because the clamped loss is flat there.
  const bool clamped = p < kProbClamp || p > 1.0 - kProbClamp;
  const double dlogit = clamped ? 0.0 : p - static_cast<double>(sample.label);
  if (dlogit == 0.0) return loss;

  kernels::axpy(dlogit, h_last, grad.block(blocks_.w_out));
  grad.block(blocks_.b_out)[0] += dlogit;

  auto g_type = grad.block(blocks_.type_emb);
  auto g_cat = grad.block(blocks_.cat_emb);
  auto g_num = grad.block(blocks_.num_proj);
  auto g_in = grad.block(blocks_.w_in);
  auto g_rec = grad.block(blocks_.w_rec);
  auto g_bias = grad.block(blocks_.bias);

  std::vector<double> dh(h), dc(h, 0.0), dz(g4), dx(d), dh_prev(h);
  for (std::size_t k = 0; k < h; ++k) dh[k] = dlogit * w_out[k];

  for (std::size_t t = steps; t-- > 0;) {
    const double* gt = gates.data() + t * g4;
    const double* c_prev = cs.data() + t * h;
    for (std::size_t k = 0; k < h; ++k) {
      const double i = gt[k], f = gt[h + k], g = gt[2 * h + k], o = gt[3 * h + k];
      const double tc = tanh_c[t * h + k];
      const double d_o = dh[k] * tc;
      dc[k] += dh[k] * o * (1.0 - tc * tc);
      const double d_i = dc[k] * g;
      const double d_g = dc[k] * i;
      const double d_f = dc[k] * c_prev[k];
      dz[k] = d_i * i * (1.0 - i);
      dz[h + k] = d_f * f * (1.0 - f);
      dz[2 * h + k] = d_g * (1.0 - g * g);
      dz[3 * h + k] = d_o * o * (1.0 - o);
      dc[k] *= f;
    }
    const std::span<const double> x(xs.data() + t * d, d);
    const std::span<const double> h_prev(hs.data() + t * h, h);
    kernels::rank1_acc(g_in, g4, d, dz, x);
    kernels::rank1_acc(g_rec, g4, h, dz, h_prev);
    kernels::axpy(1.0, dz, g_bias);

    std::fill(dx.begin(), dx.end(), 0.0);
    kernels::gemv_t_acc(w_in, g4, d, dz, dx);
    std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
    kernels::gemv_t_acc(w_rec, g4, h, dz, dh_prev);

    const auto& e = sample.events[t];
    kernels::axpy(1.0, dx, g_type.subspan(e.event_type * d, d));
    for (auto c : e.categorical) kernels::axpy(1.0, dx, g_cat.subspan(c * d, d));
    if (n_num > 0) kernels::rank1_acc(g_num, d, n_num, dx, e.numeric);
    dh.swap(dh_prev);
  }
  return loss;
}

double Backbone::loss_grad(const ParamVector& params, SampleBatch batch, ParamVector& grad) const {
  check_params(params);
  if (batch.empty()) throw Error("loss_grad: empty batch");
  if (!grad.layout_ptr() || (grad.layout_ptr() != layout_ && !(grad.layout() == *layout_))) grad = ParamVector(layout_);
  grad.fill(0.0);
  double total = 0.0;
  for (const EpisodeSample* s : batch) total += accumulate_sample(params, *s, grad);
  if (!std::isfinite(total)) throw Error("loss_grad: loss is not finite");
  if (const std::string bad = grad.first_non_finite_block(); !bad.empty()) {
    throw Error("loss_grad: non-finite gradient in block '" + bad + "'");
  }
  return total;
}

}  // namespace adasit
