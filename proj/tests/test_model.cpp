#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "mabert/model.hpp"
#include "mabert/training.hpp"

using namespace mabert;

namespace {

ModelConfig tiny_config(Variant v = Variant::agent_aware) {
  ModelConfig c;
  c.variant = v;
  c.d = 8;
  c.d_ff = 16;
  c.n_layers = 2;
  c.h = 2;
  c.F = 3;
  c.T_max = 12;
  return c;
}

Scene random_scene(std::size_t n_agents, std::size_t t_steps, Rng& rng,
                   std::vector<std::size_t> lens = {}, std::vector<std::size_t> entries = {}) {
  Scene s;
  s.N = n_agents;
  s.T = t_steps;
  s.F = 3;
  s.dt = 10;
  s.window_start = 0;
  s.data = Tensor({n_agents, t_steps, 3});
  for (std::size_t n = 0; n < n_agents; ++n) {
    const std::size_t entry = entries.empty() ? 0 : entries[n];
    std::size_t len = lens.empty() ? 1 + rng.below(t_steps - entry) : lens[n];
    s.valid_len.push_back(len);
    s.entry_step.push_back(entry);
    s.arrival_s.push_back(s.window_start + static_cast<std::int64_t>((entry + len) * 10) + 300);
    s.agent_ids.push_back("agent" + std::to_string(n));
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t f = 0; f < 3; ++f) s.at(n, t, f) = rng.gaussian(0.0, 0.7);
  }
  s.validate();
  return s;
}

Tensor forward_sprime(Model& m, const Scene& sc, const SpanMask* span = nullptr) {
  const SceneInput in = make_scene_input(sc);
  DropoutCtx ctx;
  return m.encoder.forward(in, span, ctx).s_prime;
}

}  // namespace

TEST_CASE("encoder output has the input shape for random sizes") {
  Rng rng(51);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t n_agents = 1 + rng.below(4);
    const std::size_t t_steps = 2 + rng.below(7);
    Rng init(100 + trial);
    Model m = Model::create(tiny_config(), init);
    const Scene sc = random_scene(n_agents, t_steps, rng);
    const Tensor out = forward_sprime(m, sc);
    CHECK(out.rows() == n_agents * t_steps);
    CHECK(out.cols() == 3);
  }
}

TEST_CASE("agent permutation equivariance of the agent-aware encoder") {
  Rng rng(52);
  Rng init(77);
  Model m = Model::create(tiny_config(), init);
  const Scene sc = random_scene(3, 8, rng, {8, 6, 4}, {0, 1, 2});

  Scene permuted = sc;
  const std::vector<std::size_t> perm = {2, 0, 1};  // permuted[i] = sc[perm[i]]
  for (std::size_t i = 0; i < 3; ++i) {
    permuted.valid_len[i] = sc.valid_len[perm[i]];
    permuted.entry_step[i] = sc.entry_step[perm[i]];
    permuted.arrival_s[i] = sc.arrival_s[perm[i]];
    permuted.agent_ids[i] = sc.agent_ids[perm[i]];
    for (std::size_t t = 0; t < sc.T; ++t)
      for (std::size_t f = 0; f < 3; ++f) permuted.at(i, t, f) = sc.at(perm[i], t, f);
  }
  const Tensor out = forward_sprime(m, sc);
  const Tensor out_p = forward_sprime(m, permuted);
  const SceneInput in = make_scene_input(sc);
  const SceneInput in_p = make_scene_input(permuted);
  double worst = 0.0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t < sc.valid_len[perm[i]]; ++t)
      for (std::size_t f = 0; f < 3; ++f)
        worst = std::max(worst, std::abs(out_p(in_p.slot(t, i), f) -
                                         out(in.slot(t, perm[i]), f)));
  CHECK(worst < 1e-8);
}

TEST_CASE("baseline variant processes trajectories independently") {
  Rng rng(53);
  Rng init(78);
  Model m = Model::create(tiny_config(Variant::multi_head), init);
  const Scene sc = random_scene(3, 6, rng, {6, 5, 4}, {0, 0, 1});

  Scene reduced = sc;  // drop agent 2
  reduced.N = 2;
  reduced.data = Tensor({2, sc.T, 3});
  reduced.valid_len = {sc.valid_len[0], sc.valid_len[1]};
  reduced.entry_step = {sc.entry_step[0], sc.entry_step[1]};
  reduced.arrival_s = {sc.arrival_s[0], sc.arrival_s[1]};
  reduced.agent_ids = {sc.agent_ids[0], sc.agent_ids[1]};
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t t = 0; t < sc.T; ++t)
      for (std::size_t f = 0; f < 3; ++f) reduced.at(n, t, f) = sc.at(n, t, f);

  const Tensor out = forward_sprime(m, sc);
  const Tensor out_r = forward_sprime(m, reduced);
  const SceneInput in = make_scene_input(sc);
  const SceneInput in_r = make_scene_input(reduced);
  double worst = 0.0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t t = 0; t < sc.valid_len[n]; ++t)
      for (std::size_t f = 0; f < 3; ++f)
        worst = std::max(worst,
                         std::abs(out(in.slot(t, n), f) - out_r(in_r.slot(t, n), f)));
  CHECK(worst < 1e-10);
}

TEST_CASE("padding invariance: extra padded steps and agents change nothing") {
  Rng rng(54);
  for (Variant v : {Variant::agent_aware, Variant::multi_head}) {
    Rng init(79);
    Model m = Model::create(tiny_config(v), init);
    const Scene sc = random_scene(2, 6, rng, {6, 4}, {0, 0});

    Scene padded = sc;  // two extra steps, one ghost agent
    padded.N = 3;
    padded.T = 8;
    padded.data = Tensor({3, 8, 3});
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t t = 0; t < sc.valid_len[n]; ++t)
        for (std::size_t f = 0; f < 3; ++f) padded.at(n, t, f) = sc.at(n, t, f);
    padded.valid_len = {6, 4, 0};
    padded.entry_step = {0, 0, 0};
    padded.arrival_s = {sc.arrival_s[0], sc.arrival_s[1], 0};
    padded.agent_ids = {"a", "b", "ghost"};

    const Tensor out = forward_sprime(m, sc);
    const SceneInput in = make_scene_input(sc);
    const SceneInput in_p = make_scene_input(padded);
    DropoutCtx ctx;
    const Tensor out_p = m.encoder.forward(in_p, nullptr, ctx).s_prime;
    double worst = 0.0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t t = 0; t < sc.valid_len[n]; ++t)
        for (std::size_t f = 0; f < 3; ++f)
          worst = std::max(worst,
                           std::abs(out(in.slot(t, n), f) - out_p(in_p.slot(t, n), f)));
    CHECK(worst < 1e-8);
  }
}

TEST_CASE("batch-vs-single equivalence at every valid slot") {
  Rng rng(55);
  Rng init(80);
  Model m = Model::create(tiny_config(), init);
  const Scene a = random_scene(2, 5, rng, {5, 3}, {0, 0});
  const Scene b = random_scene(4, 9, rng, {9, 7, 5, 9}, {0, 2, 1, 0});
  const auto padded = batch({&a, &b});
  DropoutCtx ctx;
  for (std::size_t k = 0; k < 2; ++k) {
    const Scene& orig = (k == 0) ? a : b;
    const SceneInput in = make_scene_input(orig);
    const SceneInput in_p = make_scene_input(padded[k].scene);
    const Tensor out = m.encoder.forward(in, nullptr, ctx).s_prime;
    const Tensor out_p = m.encoder.forward(in_p, nullptr, ctx).s_prime;
    double worst = 0.0;
    for (std::size_t n = 0; n < orig.N; ++n)
      for (std::size_t t = 0; t < orig.valid_len[n]; ++t)
        for (std::size_t f = 0; f < 3; ++f)
          worst = std::max(worst, std::abs(out(in.slot(t, n), f) -
                                           out_p(in_p.slot(t, n), f)));
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("full encoder gradients match finite differences") {
  Rng rng(56);
  for (Variant v : {Variant::agent_aware, Variant::multi_head}) {
    Rng init(81);
    Model m = Model::create(tiny_config(v), init);
    const Scene sc = random_scene(2, 4, rng, {4, 3}, {0, 1});
    SceneInput in = make_scene_input(sc);
    const SpanMask span{0, 1, 2};
    const Tensor w = gradcheck::random_tensor(in.nt(), 3, rng);
    DropoutCtx ctx;
    auto eval = [&] {
      return gradcheck::weighted_sum(m.encoder.forward(in, &span, ctx).s_prime, w);
    };
    eval();
    m.zero_grads();
    m.encoder.backward(w, Tensor());
    double worst = 0.0;
    for (auto& [name, p] : m.registry())
      worst = std::max(worst, gradcheck::check_param(*p, eval));
    INFO(variant_name(v));
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("decoder emits outputs per queried agent and ignores the others") {
  Rng rng(57);
  Rng init(82);
  Model m = Model::create(tiny_config(), init);
  m.add_decoder(1, init);
  const Scene sc = random_scene(5, 6, rng, {6, 6, 6, 6, 6}, {});
  const SceneInput in = make_scene_input(sc);
  DropoutCtx ctx;
  const EncoderTrace tr = m.encoder.forward(in, nullptr, ctx);

  std::vector<std::uint8_t> queried = {1, 0, 1, 0, 0};  // 2 of 5 still airborne
  const Tensor y = m.decoder->forward(tr.memory, in, queried, ctx);
  REQUIRE(y.rows() == 5);
  REQUIRE(y.cols() == 1);

  // outputs for the queried agents do not depend on which others exist
  Scene swapped = sc;  // swap the two non-queried agents 1 and 3
  for (std::size_t t = 0; t < sc.T; ++t)
    for (std::size_t f = 0; f < 3; ++f) {
      swapped.at(1, t, f) = sc.at(3, t, f);
      swapped.at(3, t, f) = sc.at(1, t, f);
    }
  const SceneInput in_s = make_scene_input(swapped);
  const EncoderTrace tr_s = m.encoder.forward(in_s, nullptr, ctx);
  const Tensor y_s = m.decoder->forward(tr_s.memory, in_s, queried, ctx);
  CHECK(std::abs(y(0, 0) - y_s(0, 0)) < 1e-8);
  CHECK(std::abs(y(2, 0) - y_s(2, 0)) < 1e-8);
}

TEST_CASE("decoder gradients match finite differences through the encoder") {
  Rng rng(58);
  for (Variant v : {Variant::agent_aware, Variant::multi_head}) {
    Rng init(83);
    Model m = Model::create(tiny_config(v), init);
    m.add_decoder(2, init);
    const Scene sc = random_scene(2, 4, rng, {4, 4}, {0, 0});
    SceneInput in = make_scene_input(sc);
    const std::vector<std::uint8_t> queried = {1, 1};
    const Tensor w = gradcheck::random_tensor(2, 2, rng);
    DropoutCtx ctx;
    auto eval = [&] {
      const EncoderTrace tr = m.encoder.forward(in, nullptr, ctx);
      return gradcheck::weighted_sum(m.decoder->forward(tr.memory, in, queried, ctx), w);
    };
    eval();
    m.zero_grads();
    const Tensor dmem = m.decoder->backward(w);
    m.encoder.backward(Tensor(), dmem);
    double worst = 0.0;
    for (auto& [name, p] : m.registry())
      worst = std::max(worst, gradcheck::check_param(*p, eval));
    INFO(variant_name(v));
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("parameter count formula matches the registry") {
  for (Variant v : {Variant::agent_aware, Variant::multi_head}) {
    ModelConfig c = tiny_config(v);
    Rng init(84);
    Model m = Model::create(c, init);
    CHECK(m.parameter_count() == parameter_count(c, false));
    m.add_decoder(1, init);
    CHECK(m.parameter_count() == parameter_count(c, true, 1));
  }
  // a linear layer from F to d contributes F*d + d scalars
  Linear probe(3, 8);
  CHECK(probe.W.value.size() + probe.b.value.size() == 3 * 8 + 8);

  // the agent-aware layer holds two extra d x d maps compared with a
  // plain Wq/Wk pair
  AgentAwareAttention aa(8);
  MultiHeadAttention mh(8, 2);
  const std::size_t qk_pair = 2 * 8 * 8;
  CHECK(aa.wq_self.value.size() + aa.wk_self.value.size() + aa.wq_other.value.size() +
            aa.wk_other.value.size() ==
        qk_pair + 2 * 8 * 8);

  // the desk-scale default config
  ModelConfig desk;
  CHECK(desk.d == 32);
  CHECK(desk.d_ff == 64);
  CHECK(desk.n_layers == 2);
  CHECK(desk.h == 4);
  CHECK(desk.T_max == 60);
  Rng init(85);
  Model m = Model::create(desk, init);
  CHECK(m.parameter_count() == parameter_count(desk, false));
}

TEST_CASE("pretrain span masking") {
  Rng rng(59);
  const Scene sc = random_scene(3, 10, rng, {10, 8, 3}, {0, 0, 0});
  const SceneInput in = make_scene_input(sc);

  // two minutes at dt = 10 is a 12-step span
  CHECK(steps_for_seconds(10, 120) == 12);

  Rng draw_a(7), draw_b(7);
  const SpanMask a = draw_pretrain_span(in, 5, draw_a);
  const SpanMask b = draw_pretrain_span(in, 5, draw_b);
  CHECK(a.agent == b.agent);
  CHECK(a.start == b.start);  // same seed, same location
  CHECK(a.len == 5);
  CHECK(in.valid_len[a.agent] >= 5);
  CHECK(a.start + a.len <= in.valid_len[a.agent]);

  // no agent long enough: span shrinks to the longest valid length
  const Scene tiny = random_scene(2, 6, rng, {3, 2}, {0, 0});
  const SceneInput tin = make_scene_input(tiny);
  Rng draw_c(9);
  const SpanMask c = draw_pretrain_span(tin, 12, draw_c);
  CHECK(c.len == 3);
  CHECK(c.agent == 0);
  CHECK(c.start == 0);
}

TEST_CASE("masked slots feed the mask embedding, not the input linear") {
  Rng rng(60);
  Rng init(86);
  Model m = Model::create(tiny_config(), init);
  const Scene sc = random_scene(2, 6, rng, {6, 6}, {0, 0});
  SceneInput in = make_scene_input(sc);
  const SpanMask span{1, 2, 3};
  DropoutCtx ctx;
  const EncoderTrace tr = m.encoder.forward(in, &span, ctx);
  m.zero_grads();
  Tensor dy = Tensor::zeros(in.nt(), 3);
  for (std::size_t t = 2; t < 5; ++t) dy(in.slot(t, 1), 0) = 1.0;
  m.encoder.backward(dy, Tensor());
  double mask_grad = 0.0;
  for (double g : m.encoder.mask_embedding.grad) mask_grad += std::abs(g);
  CHECK(mask_grad > 0.0);
}

TEST_CASE("same seed gives bitwise identical models and outputs") {
  Rng rng(61);
  const Scene sc = random_scene(2, 5, rng, {5, 4}, {0, 0});
  auto build = [&] {
    Rng init(4242);
    Model m = Model::create(tiny_config(), init);
    return forward_sprime(m, sc);
  };
  const Tensor a = build();
  const Tensor b = build();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("encoder rejects scenes longer than T_max and non-finite activations") {
  Rng rng(62);
  Rng init(87);
  ModelConfig c = tiny_config();
  c.T_max = 4;
  Model m = Model::create(c, init);
  const Scene sc = random_scene(1, 6, rng, {6}, {0});
  const SceneInput in = make_scene_input(sc);
  DropoutCtx ctx;
  CHECK_THROWS_WITH(m.encoder.forward(in, nullptr, ctx),
                    Catch::Matchers::ContainsSubstring("T_max"));

  Rng init2(88);
  Model m2 = Model::create(tiny_config(), init2);
  const Scene bad = random_scene(1, 4, rng, {4}, {0});
  SceneInput bin = make_scene_input(bad);
  bin.x(0, 0) = 1e308;  // overflows inside the stack
  CHECK_THROWS_WITH(m2.encoder.forward(bin, nullptr, ctx),
                    Catch::Matchers::ContainsSubstring("encoder layer"));
}
