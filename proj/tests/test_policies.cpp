#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "wzmerge/policies.hpp"

using namespace wzmerge;

namespace {

std::vector<GapObservation> uniform_obs(Rng& rng, size_t n_each, double lo, double hi) {
  std::vector<GapObservation> obs;
  for (size_t i = 0; i < n_each; ++i) {
    for (Direction d : {Direction::Forward, Direction::Rear}) {
      GapObservation o;
      o.direction = d;
      o.gap_ft = rng.uniform(lo, hi);
      o.label = rng.bernoulli(0.3) ? 1 : 0;
      o.neighbor_is_truck = rng.bernoulli(0.2);
      obs.push_back(o);
    }
  }
  return obs;
}

std::vector<GapObservation> fixed_gaps(const std::vector<double>& gaps) {
  // Same gap set in both directions so one percentile check covers both.
  std::vector<GapObservation> obs;
  for (Direction d : {Direction::Forward, Direction::Rear})
    for (double g : gaps) {
      GapObservation o;
      o.direction = d;
      o.gap_ft = g;
      o.label = 0;
      obs.push_back(o);
    }
  return obs;
}

TruckContext both_clear_context() {
  TruckContext ctx;
  ctx.truck_id = 1;
  ctx.truck_speed_fps = 50.0;
  ctx.front_present = true;
  ctx.rear_present = true;
  ctx.gap_front_ft = 150.0;
  ctx.gap_rear_ft = 120.0;
  ctx.rear_speed_fps = 55.0;
  return ctx;
}

}  // namespace

TEST_CASE("percentile fit on a hand set") {
  std::vector<double> gaps{10.0, 20.0, 30.0, 40.0, 50.0};
  // Pad to the 100-observation floor by repeating the set.
  std::vector<double> padded;
  for (int r = 0; r < 20; ++r) padded.insert(padded.end(), gaps.begin(), gaps.end());
  const GapThresholds t = fit_gap_percentiles(fixed_gaps(padded));
  CHECK(t.forward_p50 == doctest::Approx(30.0));
  CHECK(t.rear_p50 == doctest::Approx(30.0));
  CHECK(t.forward_p85 > t.forward_p50);
  CHECK(t.forward_p85 <= 50.0);
}

TEST_CASE("constant gaps give p50 = p85") {
  const std::vector<double> same(150, 77.0);
  const GapThresholds t = fit_gap_percentiles(fixed_gaps(same));
  CHECK(t.forward_p50 == doctest::Approx(77.0));
  CHECK(t.forward_p85 == doctest::Approx(77.0));
  CHECK(t.rear_p50 == doctest::Approx(77.0));
  CHECK(t.rear_p85 == doctest::Approx(77.0));
}

TEST_CASE("uniform sample percentiles approach the order statistics") {
  Rng rng(123);
  const auto obs = uniform_obs(rng, 10000, 0.0, 100.0);
  const GapThresholds t = fit_gap_percentiles(obs);
  CHECK(t.forward_p50 == doctest::Approx(50.0).epsilon(0.05));
  CHECK(t.forward_p85 == doctest::Approx(85.0).epsilon(0.03));
  CHECK(t.rear_p50 == doctest::Approx(50.0).epsilon(0.05));
  CHECK(t.rear_p85 == doctest::Approx(85.0).epsilon(0.03));
}

TEST_CASE("observation floor is enforced per direction") {
  Rng rng(9);
  auto obs = uniform_obs(rng, 99, 0.0, 100.0);  // 99 per direction
  CHECK_THROWS_AS(fit_gap_percentiles(obs), Error);
  // Topping up only one direction still faults on the other.
  for (int i = 0; i < 10; ++i) {
    GapObservation o;
    o.direction = Direction::Forward;
    o.gap_ft = 50.0;
    obs.push_back(o);
  }
  CHECK_THROWS_AS(fit_gap_percentiles(obs), Error);
}

TEST_CASE("gap policy accepts iff both sides clear the threshold") {
  GapThresholds thr;
  thr.forward_p50 = 100.0;
  thr.forward_p85 = 200.0;
  thr.rear_p50 = 80.0;
  thr.rear_p85 = 160.0;

  TruckContext ctx = both_clear_context();
  SUBCASE("both clear at p50") {
    CHECK(decide_gap(ctx, thr, GapPercentile::P50).merge_now);
    // Same gaps fail the stricter p85.
    CHECK(!decide_gap(ctx, thr, GapPercentile::P85).merge_now);
  }
  SUBCASE("front short") {
    ctx.gap_front_ft = 99.9;
    CHECK(!decide_gap(ctx, thr, GapPercentile::P50).merge_now);
  }
  SUBCASE("rear short") {
    ctx.gap_rear_ft = 79.9;
    CHECK(!decide_gap(ctx, thr, GapPercentile::P50).merge_now);
  }
  SUBCASE("threshold is inclusive") {
    ctx.gap_front_ft = 100.0;
    ctx.gap_rear_ft = 80.0;
    CHECK(decide_gap(ctx, thr, GapPercentile::P50).merge_now);
  }
  SUBCASE("absent neighbors read as free road") {
    ctx.front_present = false;
    ctx.rear_present = false;
    ctx.gap_front_ft = kFreeRoadGap;
    ctx.gap_rear_ft = kFreeRoadGap;
    CHECK(decide_gap(ctx, thr, GapPercentile::P85).merge_now);
  }
  SUBCASE("rationale is stamped") {
    const MergeDecision d = decide_gap(ctx, thr, GapPercentile::P50);
    CHECK(d.rationale == (d.merge_now ? MergeRationale::GapAccepted : MergeRationale::Held));
  }
}

TEST_CASE("kinematic rule uses follower-scaled envelopes") {
  TruckContext ctx = both_clear_context();
  ctx.truck_speed_fps = 50.0;
  ctx.rear_speed_fps = 60.0;
  // Front needs s0 + v*T = 8.2 + 50, rear needs 8.2 + 60.
  ctx.gap_front_ft = 58.3;
  ctx.gap_rear_ft = 68.3;
  CHECK(decide_kinematic(ctx).merge_now);
  ctx.gap_front_ft = 58.1;
  CHECK(!decide_kinematic(ctx).merge_now);
  ctx.gap_front_ft = 58.3;
  ctx.gap_rear_ft = 68.1;
  CHECK(!decide_kinematic(ctx).merge_now);
}

TEST_CASE("bayes posterior arithmetic on a two-bin toy") {
  BayesDirectionModel m;
  m.prior_b0 = 0.0;  // logistic(0) = 0.5 regardless of type
  m.prior_b1 = 0.0;
  m.bin_width_ft = 5.0;
  m.gap_origin_ft = 0.0;
  m.like_conflict = {0.2, 0.8};
  m.like_clear = {0.8, 0.2};
  // Posterior = lc*p / (lc*p + lcl*(1-p)) with p = 0.5: bin 0 -> 0.2.
  CHECK(m.posterior(2.0, false) == doctest::Approx(0.2));
  CHECK(m.posterior(7.0, false) == doctest::Approx(0.8));
  CHECK(m.prior(false) == doctest::Approx(0.5));
  CHECK(m.prior(true) == doctest::Approx(0.5));

  // Type-sensitive prior shifts the posterior.
  m.prior_b1 = 2.0;
  CHECK(m.prior(true) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
  CHECK(m.posterior(2.0, true) > 0.2);
}

TEST_CASE("bin index clamps to the histogram range") {
  BayesDirectionModel m;
  m.bin_width_ft = 5.0;
  m.gap_origin_ft = 10.0;
  m.like_conflict = {0.3, 0.3, 0.4};
  m.like_clear = {0.4, 0.3, 0.3};
  CHECK(m.bin_index(10.0) == 0);
  CHECK(m.bin_index(14.9) == 0);
  CHECK(m.bin_index(15.0) == 1);
  CHECK(m.bin_index(24.9) == 2);
  CHECK(m.bin_index(1e9) == 2);     // above range clamps to the last bin
  CHECK(m.bin_index(0.0) == 0);     // below range clamps to the first
  CHECK(m.bin_index(-50.0) == 0);
}

TEST_CASE("bayes decision holds at exactly even odds") {
  BayesModel b;
  for (BayesDirectionModel* m : {&b.forward, &b.rear}) {
    m->prior_b0 = 0.0;
    m->prior_b1 = 0.0;
    m->bin_width_ft = 5.0;
    m->gap_origin_ft = 0.0;
    m->like_conflict = {0.5, 0.1};
    m->like_clear = {0.5, 0.9};
  }
  TruckContext ctx = both_clear_context();
  // Both sides land in bin 0: posterior exactly 0.5, the strict rule holds.
  ctx.gap_front_ft = 2.0;
  ctx.gap_rear_ft = 2.0;
  CHECK(!decide_bayes(ctx, b).merge_now);
  // Bin 1 posteriors are 0.1/(0.1+0.9) = 0.1 on both sides: merge.
  ctx.gap_front_ft = 7.0;
  ctx.gap_rear_ft = 7.0;
  const MergeDecision d = decide_bayes(ctx, b);
  CHECK(d.merge_now);
  CHECK(d.rationale == MergeRationale::BayesLowRisk);
  // One risky side blocks.
  ctx.gap_front_ft = 2.0;
  CHECK(!decide_bayes(ctx, b).merge_now);
}

TEST_CASE("absent neighbor contributes zero risk to bayes") {
  BayesModel b;
  for (BayesDirectionModel* m : {&b.forward, &b.rear}) {
    m->prior_b0 = 5.0;  // high prior risk
    m->bin_width_ft = 5.0;
    m->like_conflict = {0.9};
    m->like_clear = {0.1};
  }
  TruckContext ctx;
  ctx.truck_id = 2;
  ctx.truck_speed_fps = 40.0;
  ctx.front_present = false;
  ctx.rear_present = false;
  CHECK(decide_bayes(ctx, b).merge_now);
}

TEST_CASE("fitted prior recovers type independence and separation") {
  Rng rng(77);
  // Conflict probability 0.3 for both neighbor types: b1 should be ~0 and
  // logistic(b0) ~0.3.
  std::vector<GapObservation> obs;
  for (int i = 0; i < 4000; ++i) {
    for (Direction d : {Direction::Forward, Direction::Rear}) {
      GapObservation o;
      o.direction = d;
      o.neighbor_is_truck = rng.bernoulli(0.5);
      o.label = rng.bernoulli(0.3) ? 1 : 0;
      // Gaps correlated with the label, with overlap so middle bins hold
      // both classes and the posterior is strictly monotone across probes.
      o.gap_ft = o.label == 1 ? rng.uniform(5.0, 100.0) : rng.uniform(60.0, 200.0);
      obs.push_back(o);
    }
  }
  const BayesModel b = fit_bayes(obs);
  const double p_car = b.forward.prior(false);
  const double p_truck = b.forward.prior(true);
  CHECK(p_car == doctest::Approx(0.3).epsilon(0.1));
  CHECK(p_truck == doctest::Approx(0.3).epsilon(0.1));
  CHECK(std::fabs(b.forward.prior_b1) < 0.3);

  // Posterior decreases as the gap opens (monotone likelihood ratio here).
  const double near = b.forward.posterior(10.0, false);
  const double mid = b.forward.posterior(80.0, false);
  const double far = b.forward.posterior(190.0, false);
  CHECK(near > mid);
  CHECK(mid > far);
  CHECK(near > 0.5);
  CHECK(far < 0.1);
}

TEST_CASE("likelihood histograms are normalized and smoothed") {
  Rng rng(31);
  const auto obs = uniform_obs(rng, 500, 0.0, 100.0);
  const BayesModel b = fit_bayes(obs);
  for (const BayesDirectionModel* m : {&b.forward, &b.rear}) {
    REQUIRE(!m->like_conflict.empty());
    REQUIRE(m->like_conflict.size() == m->like_clear.size());
    double sc = 0.0, scl = 0.0;
    for (double v : m->like_conflict) {
      CHECK(v > 0.0);  // Laplace smoothing leaves no empty bin
      sc += v;
    }
    for (double v : m->like_clear) {
      CHECK(v > 0.0);
      scl += v;
    }
    CHECK(sc == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(scl == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("single-class direction faults the bayes fit") {
  std::vector<GapObservation> obs;
  Rng rng(4);
  for (int i = 0; i < 300; ++i) {
    for (Direction d : {Direction::Forward, Direction::Rear}) {
      GapObservation o;
      o.direction = d;
      o.gap_ft = rng.uniform(0.0, 100.0);
      o.label = d == Direction::Forward ? 0 : (i % 3 == 0 ? 1 : 0);
      obs.push_back(o);
    }
  }
  CHECK_THROWS_AS(fit_bayes(obs), Error);
}

TEST_CASE("threshold and bayes files round trip") {
  Rng rng(15);
  const auto obs = uniform_obs(rng, 800, 5.0, 250.0);
  const GapThresholds t = fit_gap_percentiles(obs);
  const BayesModel b = fit_bayes(obs);

  save_thresholds(t, "test_thr.json", "aa", 1);
  const GapThresholds t2 = load_thresholds("test_thr.json");
  std::filesystem::remove("test_thr.json");
  CHECK(t2.forward_p50 == t.forward_p50);
  CHECK(t2.forward_p85 == t.forward_p85);
  CHECK(t2.rear_p50 == t.rear_p50);
  CHECK(t2.rear_p85 == t.rear_p85);

  save_bayes(b, "test_bayes.json", "aa", 1);
  const BayesModel b2 = load_bayes("test_bayes.json");
  std::filesystem::remove("test_bayes.json");
  CHECK(b2.forward.prior_b0 == b.forward.prior_b0);
  CHECK(b2.forward.prior_b1 == b.forward.prior_b1);
  CHECK(b2.forward.gap_origin_ft == b.forward.gap_origin_ft);
  REQUIRE(b2.forward.like_conflict.size() == b.forward.like_conflict.size());
  for (size_t i = 0; i < b.forward.like_conflict.size(); ++i)
    CHECK(b2.forward.like_conflict[i] == b.forward.like_conflict[i]);
  CHECK(b2.rear.prior_b1 == b.rear.prior_b1);

  // A posterior probe agrees end to end.
  CHECK(b2.rear.posterior(42.0, true) == doctest::Approx(b.rear.posterior(42.0, true)));
}

TEST_CASE("policy names round trip and kinematic is nameable") {
  for (PolicyKind k : {PolicyKind::Lstm, PolicyKind::Bayes, PolicyKind::GapP50,
                       PolicyKind::GapP85, PolicyKind::KinematicGap})
    CHECK(policy_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(policy_from_string("dqn"), Error);
}

TEST_CASE("lstm policy: absent side is vacuously safe, missing history holds") {
  // A context with no neighbors at all merges without consulting the nets.
  Dataset tiny;
  Rng rng(8);
  for (int i = 0; i < 60; ++i) {
    LabeledSample s;
    for (size_t k = 0; k < kWindowValues; ++k) s.window.values[k] = rng.uniform(0.0, 1.0);
    s.label = i % 2;
    tiny.samples.push_back(s);
  }
  TrainConfig tc;
  tc.hidden = 3;
  tc.max_epochs = 1;
  tc.batch_size = 16;
  tc.seed = 2;
  const ModelArtifact fwd = train_lstm(tiny, tiny, Direction::Forward, tc);
  const ModelArtifact rear = train_lstm(tiny, tiny, Direction::Rear, tc);

  TruckContext ctx;
  ctx.truck_id = 5;
  ctx.front_present = false;
  ctx.rear_present = false;
  const MergeDecision open = decide_lstm(ctx, fwd, rear);
  CHECK(open.merge_now);
  CHECK(open.rationale == MergeRationale::LstmClear);

  // A present neighbor without an accumulated window forces Held.
  ctx.front_present = true;
  ctx.gap_front_ft = 500.0;
  CHECK(!decide_lstm(ctx, fwd, rear).merge_now);
  CHECK(decide_lstm(ctx, fwd, rear).rationale == MergeRationale::Held);
}
