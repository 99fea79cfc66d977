#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lvik/scheduler.hpp"
#include "lvik/sim.hpp"
#include "test_util.hpp"

using namespace lvik;

namespace {

RunConfig mini_config(double duration = 3.0, bool zero_noise = true) {
  RunConfig cfg = default_config();
  cfg.gait.duration = duration;
  cfg.rates.lidar_points = 4000;
  cfg.zero_noise = zero_noise;
  cfg.viko.keyframe_min_tracked = 8;
  cfg.workers = 2;
  cfg.finalize();
  return cfg;
}

std::vector<MeasurementEvent> without_rank(const std::vector<MeasurementEvent>& in,
                                           int rank) {
  std::vector<MeasurementEvent> out;
  for (const auto& e : in)
    if (e.rank != rank) out.push_back(e);
  return out;
}

}  // namespace

TEST_CASE("event stream is time-ordered with the documented tie-break") {
  const RunConfig cfg = mini_config(1.0);
  const SimResult sim = simulate(cfg);
  const auto events = build_event_stream(sim.dataset);
  REQUIRE(!events.empty());
  for (size_t i = 1; i < events.size(); ++i) {
    const bool ordered = events[i - 1].stamp < events[i].stamp ||
                         (events[i - 1].stamp == events[i].stamp &&
                          events[i - 1].rank <= events[i].rank);
    CHECK(ordered);
  }
}

TEST_CASE("empty stream produces an empty trajectory") {
  const RunConfig cfg = mini_config(1.0);
  const SimResult sim = simulate(cfg);
  Pipeline pipe(cfg, sim.dataset.calib);
  pipe.initialize(sim.dataset.ground_truth.front());
  pipe.run({});
  CHECK(pipe.trajectory().empty());
}

TEST_CASE("IMU-only stream dead-reckons without emitting poses") {
  const RunConfig cfg = mini_config(1.0);
  const SimResult sim = simulate(cfg);
  Dataset imu_only;
  imu_only.calib = sim.dataset.calib;
  imu_only.imu = sim.dataset.imu;
  imu_only.ground_truth = sim.dataset.ground_truth;

  Pipeline pipe(cfg, imu_only.calib);
  pipe.initialize(imu_only.ground_truth.front());
  pipe.run(build_event_stream(imu_only));
  CHECK(pipe.trajectory().empty());
  // Dead reckoning still tracked the motion (zero noise).
  CHECK((pipe.state().p_w - imu_only.ground_truth.back().pose.translation).norm() <
        1e-3);
}

TEST_CASE("mode liko equals removing camera events; mode viko likewise") {
  const RunConfig cfg = mini_config(2.0);
  const SimResult sim = simulate(cfg);
  const auto events = build_event_stream(sim.dataset);

  RunConfig liko_cfg = cfg;
  liko_cfg.mode = "liko";

  Pipeline a(liko_cfg, sim.dataset.calib);
  a.initialize(sim.dataset.ground_truth.front());
  a.run(events);

  Pipeline b(liko_cfg, sim.dataset.calib);
  b.initialize(sim.dataset.ground_truth.front());
  b.run(without_rank(events, 3));

  const std::string ta = trajectory_text(a.trajectory());
  const std::string tb = trajectory_text(b.trajectory());
  CHECK(ta == tb);
  CHECK(a.map_digest() == b.map_digest());

  RunConfig viko_cfg = cfg;
  viko_cfg.mode = "viko";
  Pipeline c(viko_cfg, sim.dataset.calib);
  c.initialize(sim.dataset.ground_truth.front());
  c.run(events);
  Pipeline d(viko_cfg, sim.dataset.calib);
  d.initialize(sim.dataset.ground_truth.front());
  d.run(without_rank(events, 2));
  CHECK(trajectory_text(c.trajectory()) == trajectory_text(d.trajectory()));
}

TEST_CASE("identical replays produce bit-identical trajectories") {
  const RunConfig cfg = mini_config(2.0);
  const SimResult sim = simulate(cfg);

  Pipeline a(cfg, sim.dataset.calib);
  a.initialize(sim.dataset.ground_truth.front());
  a.run(build_event_stream(sim.dataset));

  Pipeline b(cfg, sim.dataset.calib);
  b.initialize(sim.dataset.ground_truth.front());
  b.run(build_event_stream(sim.dataset));

  CHECK(trajectory_text(a.trajectory()) == trajectory_text(b.trajectory()));
  CHECK(a.map_digest() == b.map_digest());
}

TEST_CASE("trajectories are identical across worker counts") {
  const RunConfig cfg = mini_config(2.0);
  const SimResult sim = simulate(cfg);

  RunConfig cfg1 = cfg;
  cfg1.workers = 1;
  cfg1.finalize();
  RunConfig cfg4 = cfg;
  cfg4.workers = 4;
  cfg4.finalize();

  Pipeline a(cfg1, sim.dataset.calib);
  a.initialize(sim.dataset.ground_truth.front());
  a.run(build_event_stream(sim.dataset));
  Pipeline b(cfg4, sim.dataset.calib);
  b.initialize(sim.dataset.ground_truth.front());
  b.run(build_event_stream(sim.dataset));

  CHECK(trajectory_text(a.trajectory()) == trajectory_text(b.trajectory()));
  CHECK(a.map_digest() == b.map_digest());
}

TEST_CASE("out-of-order events are rejected with a report") {
  const RunConfig cfg = mini_config(1.0);
  const SimResult sim = simulate(cfg);
  auto events = build_event_stream(sim.dataset);
  REQUIRE(events.size() > 100);

  Pipeline pipe(cfg, sim.dataset.calib);
  pipe.initialize(sim.dataset.ground_truth.front());
  for (size_t i = 0; i < 100; ++i) pipe.step(events[i]);
  pipe.step(events[10]);  // stale
  CHECK(pipe.stats().rejected_events == 1);
}

TEST_CASE("imu gaps inflate the covariance and warn") {
  const RunConfig cfg = mini_config(1.0);
  const SimResult sim = simulate(cfg);
  Pipeline pipe(cfg, sim.dataset.calib);
  pipe.initialize(sim.dataset.ground_truth.front());

  ImuSample s0 = sim.dataset.imu.front();
  pipe.step({s0.stamp, 0, s0});
  const double trace_before = pipe.covariance().trace();
  ImuSample s1 = s0;
  s1.stamp += 1.0;  // a full second of silence
  pipe.step({s1.stamp, 0, s1});
  CHECK(pipe.stats().imu_gap_warnings == 1);
  CHECK(pipe.covariance().trace() > trace_before * 2.0);
}

TEST_CASE("output count equals lidar updates plus camera keyframes") {
  const RunConfig cfg = mini_config(2.0);
  const SimResult sim = simulate(cfg);
  Pipeline pipe(cfg, sim.dataset.calib);
  pipe.initialize(sim.dataset.ground_truth.front());
  pipe.run(build_event_stream(sim.dataset));
  CHECK(pipe.trajectory().size() ==
        pipe.stats().lidar_updates + pipe.stats().camera_keyframes);
  CHECK(pipe.stats().lidar_updates == sim.dataset.scans.size());
}

TEST_CASE("noise-free short run stays on the ground truth") {
  const RunConfig cfg = mini_config(3.0);
  const SimResult sim = simulate(cfg);
  Pipeline pipe(cfg, sim.dataset.calib);
  pipe.initialize(sim.dataset.ground_truth.front());
  pipe.run(build_event_stream(sim.dataset));
  REQUIRE(!pipe.trajectory().empty());
  const double ate = ate_rmse(pipe.trajectory(), sim.dataset.ground_truth);
  CHECK(ate < 1e-3);
}
