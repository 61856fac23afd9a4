#include "adasit/error.hpp"
#include "adasit/kernels.hpp"
#include "adasit/model.hpp"
#include "adasit/params.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace adasit;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.event_types = 2;
  c.categorical_values = 2;
  c.numeric_dims = 1;
  c.embed_dim = 2;
  c.hidden_dim = 4;
  return c;
}

// Straightforward re-implementation reading blocks by name, used as an oracle
// for Backbone::forward.
double oracle_forward(const ModelConfig& c, const ParamVector& p, const EpisodeSample& s) {
  const std::size_t d = c.embed_dim, h = c.hidden_dim;
  const auto type_emb = p.block("type_embedding");
  const auto cat_emb = p.block("categorical_embedding");
  const auto proj = p.block("numeric_projection");
  const auto w_in = p.block("lstm_input_weights");
  const auto w_rec = p.block("lstm_recurrent_weights");
  const auto bias = p.block("lstm_bias");
  const auto w_out = p.block("output_weights");
  const double b_out = p.block("output_bias")[0];
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };

  std::vector<double> hs(h, 0.0), cs(h, 0.0);
  for (const auto& e : s.events) {
    std::vector<double> x(d, 0.0);
    for (std::size_t a = 0; a < d; ++a) {
      x[a] = type_emb[e.event_type * d + a];
      for (auto cat : e.categorical) x[a] += cat_emb[cat * d + a];
      for (std::size_t n = 0; n < c.numeric_dims; ++n) x[a] += proj[a * c.numeric_dims + n] * e.numeric[n];
    }
    std::vector<double> z(4 * h);
    for (std::size_t r = 0; r < 4 * h; ++r) {
      z[r] = bias[r];
      for (std::size_t a = 0; a < d; ++a) z[r] += w_in[r * d + a] * x[a];
      for (std::size_t a = 0; a < h; ++a) z[r] += w_rec[r * h + a] * hs[a];
    }
    std::vector<double> next_h(h);
    for (std::size_t k = 0; k < h; ++k) {
      const double i = sig(z[k]), f = sig(z[h + k]), g = std::tanh(z[2 * h + k]), o = sig(z[3 * h + k]);
      cs[k] = f * cs[k] + i * g;
      next_h[k] = o * std::tanh(cs[k]);
    }
    hs = next_h;
  }
  double logit = b_out;
  for (std::size_t k = 0; k < h; ++k) logit += w_out[k] * hs[k];
  return sig(logit);
}

std::vector<EpisodeSample> random_batch(std::uint64_t seed, const ModelConfig& c, std::size_t n, std::size_t max_len) {
  Rng rng(seed);
  std::vector<EpisodeSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(testutil::random_episode(rng, c.event_types, c.categorical_values, c.numeric_dims, max_len));
  }
  return out;
}

std::vector<const EpisodeSample*> ptrs(const std::vector<EpisodeSample>& v) {
  std::vector<const EpisodeSample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

ParamVector random_params(const Backbone& m, std::uint64_t seed, double scale) {
  ParamVector p = m.zeros();
  Rng rng(seed);
  for (double& v : p.values()) v = scale * standard_normal(rng);
  return p;
}

}  // namespace

TEST_CASE("parameter count matches the layout formula") {
  ModelConfig c;
  c.event_types = 5;
  c.categorical_values = 3;
  c.numeric_dims = 2;
  c.embed_dim = 4;
  c.hidden_dim = 8;
  // (5+3)*4 + 4*2 + 4*8*(4+8+1) + 8 + 1
  CHECK(parameter_count(c) == 32 + 8 + 416 + 9);
  CHECK(parameter_count(c) == 465);
  Backbone m(c);
  CHECK(m.layout()->size() == 465);

  std::size_t next = 0;
  for (const auto& b : m.layout()->blocks()) {
    CHECK(b.offset == next);
    next += b.size();
  }
  CHECK(next == 465);
  CHECK(m.layout()->block("lstm_input_weights").rows == 32);
  CHECK(m.layout()->block("lstm_input_weights").cols == 4);
}

TEST_CASE("config validation and hashing") {
  ModelConfig c = tiny_config();
  c.init_scale = 0.0;
  CHECK_THROWS_WITH_AS(Backbone{c}, "init scale must be positive", Error);
  c = tiny_config();
  c.hidden_dim = 0;
  CHECK_THROWS_AS(validate(c), Error);
  c = tiny_config();
  CHECK(model_config_from_json(to_json(c)) == c);
  ModelConfig c2 = c;
  c2.hidden_dim = 5;
  CHECK(config_hash(c) != config_hash(c2));
  CHECK(config_hash(c) == config_hash(tiny_config()));
  auto j = to_json(c);
  j["depth"] = 2;
  CHECK_THROWS_AS(model_config_from_json(j), Error);
}

TEST_CASE("initialization is seeded, bounded and shifts the forget bias") {
  ModelConfig c = tiny_config();
  c.init_scale = 0.05;
  Backbone m(c);
  const auto a = m.init_params(3);
  CHECK(a == m.init_params(3));
  CHECK(!(a == m.init_params(4)));
  const std::size_t h = c.hidden_dim;
  const auto bias = a.block("lstm_bias");
  for (std::size_t r = 0; r < 4 * h; ++r) {
    const double centre = (r >= h && r < 2 * h) ? 1.0 : 0.0;
    CHECK(std::abs(bias[r] - centre) <= 0.05);
  }
  for (double v : a.block("lstm_input_weights")) CHECK(std::abs(v) <= 0.05);
}

TEST_CASE("embedding is additive") {
  ModelConfig c = tiny_config();
  Backbone m(c);
  ParamVector p = m.zeros();
  auto te = p.block("type_embedding");
  te[2] = 1.0;  // type 1 -> (1, 2)
  te[3] = 2.0;
  auto ce = p.block("categorical_embedding");
  ce[0] = 0.5;  // cat 0 -> (0.5, -1)
  ce[1] = -1.0;
  auto proj = p.block("numeric_projection");
  proj[0] = 3.0;
  proj[1] = -2.0;

  EventRecord e;
  e.event_type = 1;
  e.numeric = {0.0};
  CHECK(m.embed_event(p, e) == std::vector<double>{1.0, 2.0});
  e.categorical = {0};
  CHECK(m.embed_event(p, e) == std::vector<double>{1.5, 1.0});
  e.categorical = {0, 0};
  CHECK(m.embed_event(p, e) == std::vector<double>{2.0, 0.0});
  e.categorical.clear();
  e.numeric = {1.0};
  const auto one = m.embed_event(p, e);
  e.numeric = {2.0};
  const auto two = m.embed_event(p, e);
  CHECK(two[0] - one[0] == doctest::Approx(3.0));
  CHECK(two[1] - one[1] == doctest::Approx(-2.0));
}

TEST_CASE("forward matches an independent LSTM") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
    ModelConfig c = tiny_config();
    c.embed_dim = 2 + seed % 2;
    c.hidden_dim = 2 + seed % 3;
    Backbone m(c);
    const auto p = random_params(m, seed, 0.7);
    for (const auto& s : random_batch(seed, c, 20, 6)) {
      const double got = m.forward(p, s);
      CHECK(got > 0.0);
      CHECK(got < 1.0);
      CHECK(std::abs(got - oracle_forward(c, p, s)) <= 1e-12);
    }
  }
}

TEST_CASE("zero parameters predict one half") {
  Backbone m(tiny_config());
  const auto p = m.zeros();
  const auto batch = random_batch(5, tiny_config(), 4, 5);
  for (const auto& s : batch) CHECK(m.forward(p, s) == 0.5);
  EpisodeSample pos = batch[0];
  pos.label = 1;
  const EpisodeSample* one[] = {&pos};
  CHECK(m.loss(p, one) == doctest::Approx(0.693147).epsilon(1e-6));
  const EpisodeSample* twice[] = {&pos, &pos};
  CHECK(m.loss(p, twice) == doctest::Approx(2.0 * m.loss(p, one)));
}

TEST_CASE("loss is the summed clamped cross-entropy") {
  CHECK(cross_entropy(0.5, 1) == doctest::Approx(std::log(2.0)));
  CHECK(cross_entropy(0.0, 1) == doctest::Approx(-std::log(1e-7)));
  CHECK(cross_entropy(1.0, 0) == doctest::Approx(-std::log(1e-7)));
  Backbone m(tiny_config());
  const auto p = m.init_params(2);
  const auto batch = random_batch(6, tiny_config(), 7, 5);
  double expect = 0.0;
  for (const auto& s : batch) expect += cross_entropy(m.forward(p, s), s.label);
  CHECK(m.loss(p, ptrs(batch)) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("analytic gradient matches central differences") {
  for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
    Backbone m(tiny_config());
    const auto p = random_params(m, seed, 0.5);
    const auto batch = random_batch(seed, tiny_config(), 4, 5);
    const auto b = ptrs(batch);
    ParamVector g;
    const double loss = m.loss_grad(p, b, g);
    CHECK(loss == doctest::Approx(m.loss(p, b)).epsilon(1e-12));
    const double step = 1e-4;
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      ParamVector up = p, down = p;
      up[i] += step;
      down[i] -= step;
      const double fd = (m.loss(up, b) - m.loss(down, b)) / (2.0 * step);
      const double denom = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
      worst = std::max(worst, std::abs(fd - g[i]) / denom);
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("directional derivative matches the gradient") {
  Backbone m(tiny_config());
  for (std::uint64_t seed : {21ull, 22ull}) {
    const auto p = random_params(m, seed, 0.4);
    const auto batch = random_batch(seed, tiny_config(), 6, 5);
    const auto b = ptrs(batch);
    ParamVector g;
    m.loss_grad(p, b, g);
    ParamVector dir = random_params(m, seed + 100, 1.0);
    const double norm = l2_norm(dir);
    for (double& v : dir.values()) v /= norm;
    const double eps = 1e-5;
    ParamVector up = p, down = p;
    up.axpy(eps, dir);
    down.axpy(-eps, dir);
    const double fd = (m.loss(up, b) - m.loss(down, b)) / (2.0 * eps);
    CHECK(std::abs(fd - kernels::dot(g.values(), dir.values())) <= 1e-7 * (1.0 + std::abs(fd)));
  }
}

TEST_CASE("batch gradient is the sum of sample gradients") {
  Backbone m(tiny_config());
  const auto p = m.init_params(8);
  const auto batch = random_batch(8, tiny_config(), 2, 5);
  const EpisodeSample* first[] = {&batch[0]};
  const EpisodeSample* second[] = {&batch[1]};
  ParamVector g1, g2, g12;
  m.loss_grad(p, first, g1);
  m.loss_grad(p, second, g2);
  m.loss_grad(p, ptrs(batch), g12);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(std::abs(g12[i] - (g1[i] + g2[i])) <= 1e-12 * (1.0 + std::abs(g12[i])));
  }
}

TEST_CASE("loss and gradient are pure") {
  Backbone m(tiny_config());
  const auto p = m.init_params(9);
  const auto batch = random_batch(9, tiny_config(), 5, 5);
  ParamVector a, b;
  const double la = m.loss_grad(p, ptrs(batch), a);
  const double lb = m.loss_grad(p, ptrs(batch), b);
  CHECK(la == lb);
  CHECK(a == b);
}

TEST_CASE("gradient descent on one sample reaches a stationary point") {
  // The single-sample optimum lies where the probability clamp flattens the
  // loss; the gradient decays like 1 - p on the way there.
  Backbone m(tiny_config());
  auto p = m.init_params(1);
  const auto batch = random_batch(10, tiny_config(), 1, 4);
  ParamVector g;
  double norm = 1.0;
  double prev_loss = m.loss(p, ptrs(batch));
  bool monotone = true;
  for (int it = 0; it < 20000 && norm > 1e-5; ++it) {
    const double loss = m.loss_grad(p, ptrs(batch), g);
    monotone = monotone && loss <= prev_loss;
    prev_loss = loss;
    norm = l2_norm(g);
    p.axpy(-20.0, g);
  }
  CHECK(monotone);
  CHECK(norm <= 1e-5);
}

TEST_CASE("SIMD and scalar kernels give the same gradient up to rounding") {
  if (!kernels::backend_available(kernels::Backend::avx2)) return;
  const auto saved = kernels::active_backend();
  ModelConfig c = tiny_config();
  c.embed_dim = 8;
  c.hidden_dim = 8;
  Backbone m(c);
  const auto p = m.init_params(4);
  const auto batch = random_batch(4, c, 8, 10);
  ParamVector gs, gv;
  kernels::set_backend(kernels::Backend::scalar);
  const double ls = m.loss_grad(p, ptrs(batch), gs);
  kernels::set_backend(kernels::Backend::avx2);
  const double lv = m.loss_grad(p, ptrs(batch), gv);
  kernels::set_backend(saved);
  CHECK(ls == doctest::Approx(lv).epsilon(1e-13));
  for (std::size_t i = 0; i < gs.size(); ++i) CHECK(std::abs(gs[i] - gv[i]) <= 1e-12 * (1.0 + std::abs(gs[i])));
}

TEST_CASE("model input errors") {
  Backbone m(tiny_config());
  const auto p = m.init_params(0);
  ParamVector g;
  CHECK_THROWS_AS(m.loss(p, {}), Error);
  CHECK_THROWS_AS(m.loss_grad(p, {}, g), Error);
  EpisodeSample empty;
  CHECK_THROWS_AS(m.forward(p, empty), Error);
  EpisodeSample oov;
  oov.events.push_back({});
  oov.events[0].event_type = 7;
  oov.events[0].numeric = {0.0};
  CHECK_THROWS_AS(m.forward(p, oov), Error);
  oov.events[0].event_type = 0;
  oov.events[0].numeric.clear();
  CHECK_THROWS_AS(m.forward(p, oov), Error);
  const auto other = testutil::flat(std::vector<double>(p.size(), 0.0));
  oov.events[0].numeric = {0.0};
  CHECK_THROWS_AS(m.forward(other, oov), Error);

  ParamVector nan = p;
  nan.block("output_weights")[0] = std::nan("");
  const EpisodeSample* one[] = {&oov};
  CHECK_THROWS_AS(m.loss_grad(nan, one, g), Error);
}

TEST_CASE("parameter files round-trip and check the layout") {
  Backbone m(tiny_config());
  const auto p = random_params(m, 3, 1.0);
  const auto text = format_params(p);
  CHECK(parse_params(text, m.layout()) == p);
  const auto dir = testutil::temp_dir("params");
  save_params(p, dir / "p.txt");
  CHECK(load_params(dir / "p.txt", m.layout()) == p);

  ModelConfig other_cfg = tiny_config();
  other_cfg.init_scale = 0.2;  // same shapes, different hash
  Backbone other(other_cfg);
  CHECK_THROWS_AS(parse_params(text, other.layout()), Error);
  ModelConfig bigger = tiny_config();
  bigger.hidden_dim = 5;
  CHECK_THROWS_AS(parse_params(text, Backbone(bigger).layout()), Error);
}
