#include <cmath>
#include <map>
#include <set>

#include "atm/datasets.hpp"
#include "atm/errors.hpp"
#include "atm/trainer.hpp"
#include "doctest.h"
#include "oracles.hpp"

using atm::AtmModel;
using atm::MlpSpec;
using atm::SampleSet;
using atm::Tensor;
using atm::TrainConfig;

namespace {

SampleSet small_source(std::uint64_t seed, std::size_t n = 40) { return atm::gen_two_moons(n, 0.1, seed); }

SampleSet small_target(std::uint64_t seed, std::size_t n = 40) {
  SampleSet t = atm::apply_shift(atm::gen_two_moons(n, 0.1, seed + 100),
                                 atm::ShiftSpec{atm::ShiftKind::rotation, 30.0, 0.0, {}}, seed);
  t.domain = atm::Domain::target;
  return t;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.max_epochs = 4;
  c.batch_size = 8;
  c.lr = 0.05;
  c.alpha = 0.5;
  c.early_stop = false;
  return c;
}

AtmModel small_model(std::uint64_t seed = 3) { return AtmModel(MlpSpec{{2, 6, 4}}, 2, 5, seed); }

std::vector<std::vector<double>> snapshot(const AtmModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

std::vector<std::vector<double>> snapshot_predictor(const AtmModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) {
    if (p.name.rfind("discriminator", 0) == 0) continue;
    out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  }
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.per_domain_batch() == 16);
  c.batch_size = 7;
  CHECK_THROWS_AS(c.validate(), atm::ConfigError);
  c = TrainConfig{};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), atm::ConfigError);
  c = TrainConfig{};
  c.alpha = std::nan("");
  CHECK_THROWS_AS(c.validate(), atm::ConfigError);
  c = TrainConfig{};
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), atm::ConfigError);
}

TEST_CASE("half-half sampler") {
  SUBCASE("equal sizes cover each set once") {
    atm::HalfHalfSampler s(4, 4, 2, 7, 1);
    CHECK(s.num_batches() == 2);
    std::multiset<std::size_t> src, tgt;
    while (!s.done()) {
      const auto b = s.next();
      CHECK(b.source.size() == 2);
      CHECK(b.target.size() == 2);
      src.insert(b.source.begin(), b.source.end());
      tgt.insert(b.target.begin(), b.target.end());
    }
    CHECK(src == std::multiset<std::size_t>{0, 1, 2, 3});
    CHECK(tgt == std::multiset<std::size_t>{0, 1, 2, 3});
    CHECK_THROWS(s.next());
  }
  SUBCASE("smaller domain recycles round-robin") {
    atm::HalfHalfSampler s(4, 2, 2, 7, 1);
    std::map<std::size_t, int> seen;
    while (!s.done()) {
      const auto b = s.next();
      CHECK(b.target[0] != b.target[1]);
      for (auto i : b.target) ++seen[i];
    }
    CHECK(seen.size() == 2);
    CHECK(seen[0] == 2);
    CHECK(seen[1] == 2);
  }
  SUBCASE("source appears once before repeats") {
    const SampleSet s = small_source(1, 10);
    const SampleSet t = small_target(1, 24);
    const auto batches = atm::half_half_sampler(s, t, 4, 3, 2);
    CHECK(batches.size() == 6);
    std::vector<std::size_t> order;
    for (const auto& b : batches) order.insert(order.end(), b.source.begin(), b.source.end());
    CHECK(std::set<std::size_t>(order.begin(), order.begin() + 10).size() == 10);
    std::set<std::size_t> targets;
    for (const auto& b : batches) targets.insert(b.target.begin(), b.target.end());
    CHECK(targets.size() == 24);
  }
  SUBCASE("n_b larger than both domains") {
    atm::HalfHalfSampler s(3, 2, 5, 1, 1);
    CHECK(s.num_batches() == 1);
    const auto b = s.next();
    CHECK(b.source.size() == 5);
    CHECK(b.target.size() == 5);
  }
  SUBCASE("determinism") {
    const SampleSet s = small_source(1, 20);
    const SampleSet t = small_target(1, 12);
    const auto a = atm::half_half_sampler(s, t, 4, 9, 3);
    const auto b = atm::half_half_sampler(s, t, 4, 9, 3);
    const auto c = atm::half_half_sampler(s, t, 4, 9, 4);
    bool all_same = true, any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      all_same = all_same && a[i].source == b[i].source && a[i].target == b[i].target;
      any_diff = any_diff || a[i].source != c[i].source;
    }
    CHECK(all_same);
    CHECK(any_diff);
  }
  CHECK_THROWS(atm::HalfHalfSampler(4, 4, 0, 1, 1));
  CHECK_THROWS(atm::HalfHalfSampler(0, 4, 2, 1, 1));
}

TEST_CASE("pseudo labels") {
  AtmModel m = small_model();
  for (auto& p : m.parameters()) {
    for (double& v : p.tensor.mutable_data()) v = 0.0;
  }
  const Tensor x = Tensor::from_rows({{1, 2}, {-3, 0.5}, {0, 0}});
  CHECK(atm::pseudo_label(m, x) == std::vector<int>{0, 0, 0});

  m.classifier().bias.mutable_data()[1] = 5.0;
  CHECK(atm::pseudo_label(m, x) == std::vector<int>{1, 1, 1});

  const AtmModel r = small_model(11);
  atm::Rng rng(4);
  for (int label : atm::pseudo_label(r, oracle::random_tensor(rng, 50, 2, -5, 5))) {
    CHECK(label >= 0);
    CHECK(label < 2);
  }
}

TEST_CASE("sgd update") {
  std::vector<double> w{1.0}, v{0.0};
  const std::vector<double> g{1.0};
  atm::sgd_update(w, g, v, 0.1, 0.0, 0.5);
  CHECK(v[0] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(w[0] == doctest::Approx(0.85).epsilon(1e-15));

  std::vector<double> plain{2.0, -1.0}, pv{0.0, 0.0};
  atm::sgd_update(plain, std::vector<double>{0.5, -0.5}, pv, 0.2, 0.0, 0.0);
  CHECK(plain[0] == doctest::Approx(1.9));
  CHECK(plain[1] == doctest::Approx(-0.9));

  std::vector<double> m{0.0}, mv{0.0};
  atm::sgd_update(m, std::vector<double>{2.0}, mv, 0.1, 0.9, 0.0);
  const double v1 = mv[0];
  atm::sgd_update(m, std::vector<double>{2.0}, mv, 0.1, 0.9, 0.0);
  CHECK(mv[0] == doctest::Approx(0.9 * v1 + 2.0));

  std::vector<double> bad{1.0, 2.0}, bv{0.0};
  CHECK_THROWS_AS(atm::sgd_update(bad, std::vector<double>{1.0, 1.0}, bv, 0.1, 0.0, 0.0), atm::DimensionError);
}

TEST_CASE("step applies one SGD update from the full objective") {
  const AtmModel start = small_model(5);
  atm::Rng rng(8);
  const Tensor xs = oracle::random_tensor(rng, 4, 2);
  const Tensor xt = oracle::random_tensor(rng, 4, 2);
  const std::vector<int> ys{0, 1, 1, 0};
  TrainConfig c = quick_config();
  c.momentum = 0.0;
  c.weight_decay = 0.01;
  const atm::Schedule sched{0.1, 1.0};

  // Reference gradients from an independent backward on a copy.
  AtmModel ref = start;
  ref.grl_coeff = 1.0;
  const auto parts = atm::adversarial_loss(ref, xs, ys, xt, c.lambda);
  const auto yt = atm::argmax_rows(parts.target_probs);
  const Tensor mdd = atm::mdd_batch(parts.source_features, parts.target_features, ys, yt);
  atm::backward(atm::add(parts.objective, atm::scale(mdd, c.alpha)));

  AtmModel model = start;
  atm::Sgd opt(model);
  const auto r = atm::step(model, opt, xs, ys, xt, c, sched);
  CHECK(r.pseudo_labels == yt);
  CHECK(r.total_loss == doctest::Approx(r.cls_loss + r.dom_loss + c.alpha * r.mdd_loss).epsilon(1e-12));

  const auto before = start.parameters();
  const auto grads = ref.parameters();
  const auto after = model.parameters();
  double worst = 0.0;
  for (std::size_t i = 0; i < after.size(); ++i) {
    for (std::size_t k = 0; k < after[i].tensor.size(); ++k) {
      const double w = before[i].tensor.data()[k];
      const double expected = w - 0.1 * (grads[i].tensor.grad()[k] + 0.01 * w);
      worst = std::max(worst, std::abs(after[i].tensor.data()[k] - expected));
    }
    const auto g = after[i].tensor.grad();
    CHECK(std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; }));
  }
  CHECK(worst <= 1e-15);
}

TEST_CASE("momentum accumulates exactly once per step") {
  const AtmModel start = small_model(6);
  atm::Rng rng(9);
  const Tensor xs = oracle::random_tensor(rng, 4, 2);
  const Tensor xt = oracle::random_tensor(rng, 4, 2);
  const std::vector<int> ys{1, 1, 0, 0};
  TrainConfig c = quick_config();
  c.weight_decay = 0.0;
  const atm::Schedule sched{0.05, 1.0};

  AtmModel model = start;
  atm::Sgd opt(model);
  atm::step(model, opt, xs, ys, xt, c, sched);
  const auto v1 = opt.velocity();
  const auto w1 = snapshot(model);

  // Gradient at the post-step point, computed independently.
  AtmModel probe = model;
  probe.grl_coeff = 1.0;
  const auto parts = atm::adversarial_loss(probe, xs, ys, xt, c.lambda);
  const auto yt = atm::argmax_rows(parts.target_probs);
  atm::backward(atm::add(parts.objective,
                         atm::scale(atm::mdd_batch(parts.source_features, parts.target_features, ys, yt), c.alpha)));

  atm::step(model, opt, xs, ys, xt, c, sched);
  const auto g = probe.parameters();
  for (std::size_t i = 0; i < v1.size(); ++i) {
    for (std::size_t k = 0; k < v1[i].size(); ++k) {
      CHECK(opt.velocity()[i][k] == doctest::Approx(0.9 * v1[i][k] + g[i].tensor.grad()[k]).epsilon(1e-12));
    }
  }
  CHECK(snapshot(model) != w1);
}

TEST_CASE("schedule") {
  TrainConfig c;
  c.lr = 0.1;
  CHECK(atm::schedule_at(c, 0.7).lr == 0.1);
  CHECK(atm::schedule_at(c, 0.7).grl_coeff == 1.0);
  c.grl_ramp = true;
  CHECK(atm::schedule_at(c, 0.0).grl_coeff == 0.0);
  CHECK(atm::schedule_at(c, 1.0).grl_coeff == doctest::Approx(2.0 / (1.0 + std::exp(-10.0)) - 1.0));
  c.lr_decay = atm::LrDecay{10.0, 0.75};
  CHECK(atm::schedule_at(c, 0.5).lr == doctest::Approx(0.1 * std::pow(6.0, -0.75)));
}

TEST_CASE("run") {
  const SampleSet s = small_source(2);
  const SampleSet t = small_target(2);
  const AtmModel m = small_model();

  SUBCASE("zero epochs") {
    TrainConfig c = quick_config();
    c.max_epochs = 0;
    const auto r = atm::run(m, s, t, c);
    CHECK(r.log.rows.empty());
    CHECK(snapshot(r.model) == snapshot(m));
    CHECK(r.log.to_csv() == std::string(atm::MetricsLog::header()) + "\n");
  }

  SUBCASE("deterministic, decomposed, well-formed") {
    const TrainConfig c = quick_config();
    const auto a = atm::run(m, s, t, c);
    const auto b = atm::run(m, s, t, c);
    CHECK(a.log.to_csv() == b.log.to_csv());
    CHECK(snapshot(a.model) == snapshot(b.model));
    REQUIRE(a.log.rows.size() == 4);
    for (std::size_t i = 0; i < a.log.rows.size(); ++i) {
      const auto& row = a.log.rows[i];
      CHECK(row.epoch == static_cast<std::int64_t>(i + 1));
      CHECK(std::abs(row.total_loss - (row.cls_loss + c.lambda * row.dom_loss + c.alpha * row.mdd_loss)) <= 1e-10);
      CHECK(row.source_acc >= 0.0);
      CHECK(row.source_acc <= 1.0);
      CHECK(row.pseudo_acc >= 0.0);
      CHECK(row.pseudo_acc <= 1.0);
      CHECK(row.mdd_value >= 0.0);
    }
    const auto back = atm::MetricsLog::parse_csv(a.log.to_csv());
    CHECK(back.to_csv() == a.log.to_csv());
  }

  SUBCASE("empty mask matches alpha zero") {
    TrainConfig masked = quick_config();
    masked.term_mask = {false, false, false};
    TrainConfig plain = quick_config();
    plain.alpha = 0.0;
    const auto a = atm::run(m, s, t, masked);
    const auto b = atm::run(m, s, t, plain);
    CHECK(snapshot(a.model) == snapshot(b.model));
    for (std::size_t i = 0; i < a.log.rows.size(); ++i) {
      CHECK(a.log.rows[i].cls_loss == b.log.rows[i].cls_loss);
      CHECK(a.log.rows[i].target_acc == b.log.rows[i].target_acc);
    }
  }

  SUBCASE("source-only training ignores target data") {
    TrainConfig c = quick_config();
    c.alpha = 0.0;
    c.grl_coeff = 0.0;
    atm::Rng rng(77);
    SampleSet noise(oracle::random_tensor(rng, t.size(), 2, -3, 3), std::nullopt, atm::Domain::target);
    const auto a = atm::run(m, s, t, c);
    const auto b = atm::run(m, s, noise, c);
    CHECK(snapshot_predictor(a.model) == snapshot_predictor(b.model));
    CHECK(snapshot(a.model) != snapshot(b.model));
    CHECK(std::isnan(b.log.rows[0].target_acc));
    CHECK(std::isnan(b.log.rows[0].pseudo_acc));
  }

  SUBCASE("early stop") {
    TrainConfig c = quick_config();
    c.max_epochs = 40;
    c.lr = 1e-12;
    c.batch_size = 80;
    c.alpha = 0.0;
    c.early_stop = true;
    const auto r = atm::run(m, s, t, c);
    CHECK(r.log.rows.size() == 11);
  }

  SUBCASE("numeric failure names the epoch") {
    TrainConfig c = quick_config();
    c.lr = 1e200;
    try {
      atm::run(m, s, t, c);
      FAIL("expected a numeric failure");
    } catch (const atm::NumericError& e) {
      CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
  }

  SUBCASE("bad inputs") {
    TrainConfig c = quick_config();
    SampleSet unlabeled(s.features, std::nullopt, atm::Domain::source);
    CHECK_THROWS(atm::run(m, unlabeled, t, c));
    CHECK_THROWS_AS(atm::run(AtmModel(MlpSpec{{3, 4}}, 2, 4, 1), s, t, c), atm::DimensionError);
  }
}

TEST_CASE("accuracy") {
  AtmModel m = small_model();
  for (auto& p : m.parameters()) {
    for (double& v : p.tensor.mutable_data()) v = 0.0;
  }
  const SampleSet zeros(Tensor::zeros(4, 2), std::vector<int>{0, 0, 0, 0}, atm::Domain::target);
  CHECK(atm::accuracy(m, zeros) == 1.0);
  const SampleSet ones(Tensor::zeros(4, 2), std::vector<int>{1, 1, 1, 1}, atm::Domain::target);
  CHECK(atm::accuracy(m, ones) == 0.0);
  const SampleSet half(Tensor::zeros(4, 2), std::vector<int>{0, 1, 0, 1}, atm::Domain::target);
  CHECK(atm::accuracy(m, half) == 0.5);
  CHECK_THROWS(atm::accuracy(m, SampleSet(Tensor::zeros(4, 2), std::nullopt, atm::Domain::target)));
}
