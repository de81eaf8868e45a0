#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "scmoe/routing.h"

using namespace scmoe;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// Sets the router's parameters to explicit values through the param list.
void set_router(Router& router, const std::vector<double>& w, const std::vector<double>& b) {
  ParamList params;
  router.collect_params("r", params);
  REQUIRE(params.size() == 2);
  REQUIRE(params[0].tensor.numel() == static_cast<int64_t>(w.size()));
  REQUIRE(params[1].tensor.numel() == static_cast<int64_t>(b.size()));
  params[0].tensor.data() = w;
  params[1].tensor.data() = b;
}

// Dense reference: run every expert on the full input, then pick and scale.
Tensor dense_oracle(const StreamingMoELayer& layer, const Tensor& x, const RouteDecision& route) {
  const int t_len = x.size(0), d = x.size(1);
  std::vector<Tensor> full;
  for (int i = 0; i < layer.num_experts(); ++i)
    full.push_back(layer.expert(i).forward(x, eval_ctx()));
  Tensor out = Tensor::zeros({t_len, d});
  for (int t = 0; t < t_len; ++t) {
    const int e = route.indices[t];
    const double gate = route.probs.at(t, e);
    for (int j = 0; j < d; ++j) out.set(t, j, gate * full[e].at(t, j));
  }
  return out;
}

}  // namespace

TEST_CASE("route_probs") {
  Rng rng(3);
  const int d = 4;

  SUBCASE("zero parameters give the uniform gate") {
    Router router(d, 3, rng);
    set_router(router, std::vector<double>(d * 3, 0.0), {0, 0, 0});
    Tensor h = Tensor::rand_uniform({5, d}, -2, 2, rng);
    auto route = route_probs(router, h);
    for (int t = 0; t < 5; ++t)
      for (int e = 0; e < 3; ++e) CHECK(route.probs.at(t, e) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  }
  SUBCASE("saturated bias dominates") {
    Router router(d, 3, rng);
    set_router(router, std::vector<double>(d * 3, 0.0), {10, 0, 0});
    Tensor h = Tensor::rand_uniform({5, d}, -2, 2, rng);
    auto route = route_probs(router, h);
    for (int t = 0; t < 5; ++t) CHECK(route.probs.at(t, 0) > 0.9999);
  }
  SUBCASE("random case matches direct evaluation") {
    Router router(d, 3, rng);
    Tensor h = Tensor::rand_uniform({4, d}, -1, 1, rng);
    ParamList params;
    router.collect_params("r", params);
    const Tensor& w = params[0].tensor;
    const Tensor& b = params[1].tensor;
    auto route = route_probs(router, h);
    for (int t = 0; t < 4; ++t) {
      double logits[3], mx = -1e300, z = 0;
      for (int e = 0; e < 3; ++e) {
        logits[e] = b.at(e);
        for (int j = 0; j < d; ++j) logits[e] += h.at(t, j) * w.at(j, e);
        CHECK(route.logits.at(t, e) == doctest::Approx(logits[e]).epsilon(1e-12));
        mx = std::max(mx, logits[e]);
      }
      for (int e = 0; e < 3; ++e) z += std::exp(logits[e] - mx);
      for (int e = 0; e < 3; ++e)
        CHECK(route.probs.at(t, e) == doctest::Approx(std::exp(logits[e] - mx) / z).epsilon(1e-10));
    }
  }
}

TEST_CASE("select_expert") {
  CHECK(select_expert(Tensor::from({1, 3}, {0.2, 0.7, 0.1})) == std::vector<int>{1});
  // exact tie keeps the lowest index
  CHECK(select_expert(Tensor::from({1, 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3})) == std::vector<int>{0});
  CHECK(select_expert(Tensor::from({2, 2}, {0.4, 0.6, 0.5, 0.5})) == std::vector<int>{1, 0});

  SUBCASE("argmax invariant to logit shift and positive scaling") {
    Rng rng(5);
    Router router(4, 3, rng);
    Tensor h = Tensor::rand_uniform({8, 4}, -2, 2, rng);
    auto base = route_probs(router, h);
    for (double c : {-5.0, 0.5, 3.0}) {
      Tensor shifted = softmax(add(base.logits, c), -1);
      CHECK(select_expert(shifted) == base.indices);
    }
    for (double k : {0.5, 2.0, 7.0}) {
      Tensor scaled = softmax(mul(base.logits, k), -1);
      CHECK(select_expert(scaled) == base.indices);
    }
  }
}

TEST_CASE("smoe_forward") {
  Rng rng(7);
  const int d = 4, f = 8, t_len = 6;
  StreamingMoELayer layer(d, f, 3, 0.0, rng);
  Router router(d, 3, rng);
  Tensor x = Tensor::rand_uniform({t_len, d}, -1, 1, rng);
  Tensor h = Tensor::rand_uniform({t_len, d}, -1, 1, rng);

  SUBCASE("saturated router selects expert 0 with gate near 1") {
    set_router(router, std::vector<double>(d * 3, 0.0), {50, 0, 0});
    auto out = layer.forward(router, x, h, eval_ctx());
    Tensor e0 = layer.expert(0).forward(x, eval_ctx());
    CHECK(max_abs_diff(out.out, e0) < 1e-6);
    CHECK(out.route.indices == std::vector<int>(t_len, 0));
  }
  SUBCASE("zero router gives expert 0 at gate one third") {
    set_router(router, std::vector<double>(d * 3, 0.0), {0, 0, 0});
    auto out = layer.forward(router, x, h, eval_ctx());
    Tensor expect = mul(layer.expert(0).forward(x, eval_ctx()), 1.0 / 3.0);
    CHECK(max_abs_diff(out.out, expect) == 0.0);
  }
  SUBCASE("dense oracle equivalence, bit for bit") {
    for (int rep = 0; rep < 5; ++rep) {
      Tensor xs = Tensor::rand_uniform({t_len, d}, -2, 2, rng);
      Tensor hs = Tensor::rand_uniform({t_len, d}, -2, 2, rng);
      auto out = layer.forward(router, xs, hs, eval_ctx());
      CHECK(max_abs_diff(out.out, dense_oracle(layer, xs, out.route)) == 0.0);
    }
  }
  SUBCASE("sparsity: invocation counter equals frames") {
    layer.reset_invocation_count();
    layer.forward(router, x, h, eval_ctx());
    CHECK(layer.invocation_count() == t_len);
    layer.forward(router, x, h, eval_ctx());
    CHECK(layer.invocation_count() == 2 * t_len);
  }
  SUBCASE("time-axis mismatch is an error") {
    Tensor short_h = Tensor::rand_uniform({t_len - 1, d}, -1, 1, rng);
    CHECK_THROWS_AS(layer.forward(router, x, short_h, eval_ctx()), std::invalid_argument);
  }
  SUBCASE("same router and input give identical indices (R3 within a block)") {
    auto a = layer.forward(router, x, h, eval_ctx());
    auto b = layer.forward(router, x, h, eval_ctx());
    CHECK(a.route.indices == b.route.indices);
    CHECK(max_abs_diff(a.out, b.out) == 0.0);
  }
}

TEST_CASE("smoe gradient including the router path") {
  Rng rng(11);
  const int d = 3, f = 5, t_len = 4;
  StreamingMoELayer layer(d, f, 3, 0.0, rng);
  Router router(d, 3, rng);
  Tensor x = Tensor::rand_uniform({t_len, d}, -1, 1, rng);
  Tensor h = Tensor::rand_uniform({t_len, d}, -1, 1, rng);
  Tensor wgt = Tensor::rand_uniform({t_len, d}, -1, 1, rng);

  // Freeze the routing path so finite differences cannot flip an argmax.
  const std::vector<int> frozen = route_probs(router, h).indices;

  ParamList params;
  layer.collect_params("moe", params);
  router.collect_params("moe.router", params);
  std::vector<Tensor> tensors;
  for (auto& p : params) tensors.push_back(p.tensor);

  auto f_loss = [&]() {
    RouteDecision route = route_probs(router, h);
    route.indices = frozen;
    return sum(mul(layer.apply(x, route, eval_ctx()), wgt));
  };
  auto rep = grad_check_params(f_loss, tensors);
  CAPTURE(rep.max_rel_err);
  CHECK(rep.pass);

  // and with respect to the inputs
  auto repx = grad_check(
      [&](const Tensor& t) {
        RouteDecision route = route_probs(router, h);
        route.indices = frozen;
        return sum(mul(layer.apply(t, route, eval_ctx()), wgt));
      },
      x);
  CHECK(repx.pass);
  auto reph = grad_check(
      [&](const Tensor& t) {
        RouteDecision route = route_probs(router, t);
        route.indices = frozen;
        return sum(mul(layer.apply(x, route, eval_ctx()), wgt));
      },
      h);
  CHECK(reph.pass);
}

TEST_CASE("decoder-width MoE with two experts") {
  Rng rng(13);
  const int d = 4, t_len = 5;
  StreamingMoELayer layer(d, 6, 2, 0.0, rng);
  Router router(d, 2, rng);
  Tensor x = Tensor::rand_uniform({t_len, d}, -1, 1, rng);
  Tensor h = Tensor::rand_uniform({t_len, d}, -1, 1, rng);

  SUBCASE("zero router: expert 0 with gate one half") {
    set_router(router, std::vector<double>(d * 2, 0.0), {0, 0});
    auto out = layer.forward(router, x, h, eval_ctx());
    Tensor expect = mul(layer.expert(0).forward(x, eval_ctx()), 0.5);
    CHECK(max_abs_diff(out.out, expect) == 0.0);
  }
  SUBCASE("saturated router follows the selected expert") {
    set_router(router, std::vector<double>(d * 2, 0.0), {0, 40});
    auto out = layer.forward(router, x, h, eval_ctx());
    Tensor e1 = layer.expert(1).forward(x, eval_ctx());
    CHECK(max_abs_diff(out.out, e1) < 1e-6);
  }
}

TEST_CASE("routing stats") {
  SUBCASE("single layer counts") {
    RoutingStats stats(1, 3);
    stats.add_utterance({{2, 2, 2, 2}});
    CHECK(stats.counts()[0] == std::vector<int64_t>{0, 0, 4});
    CHECK(stats.total_frames() == 4);
  }
  SUBCASE("identical layers agree everywhere") {
    RoutingStats stats(2, 3);
    stats.add_utterance({{0, 1, 2}, {0, 1, 2}});
    stats.add_utterance({{1, 1}, {1, 1}});
    auto agree = stats.agreement();
    CHECK(agree[0][1] == 1.0);
    CHECK(agree[1][0] == 1.0);
    CHECK(agree[0][0] == 1.0);
  }
  SUBCASE("disagreement measured") {
    RoutingStats stats(2, 3);
    stats.add_utterance({{0, 1, 2, 0}, {0, 2, 2, 1}});
    CHECK(stats.agreement()[0][1] == doctest::Approx(0.5));
  }
  SUBCASE("layer count mismatch rejected") {
    RoutingStats stats(2, 3);
    CHECK_THROWS_AS(stats.add_utterance({{0}}), std::invalid_argument);
  }
}

TEST_CASE("router sharing mode parsing") {
  CHECK(router_sharing_from_string("R1") == RouterSharing::kGlobal);
  CHECK(router_sharing_from_string("R2") == RouterSharing::kPerLayer);
  CHECK(router_sharing_from_string("R3") == RouterSharing::kPerBlock);
  CHECK(to_string(RouterSharing::kPerBlock) == "R3");
  CHECK_THROWS_AS(router_sharing_from_string("R9"), std::invalid_argument);
}
