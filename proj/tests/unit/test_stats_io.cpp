#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "horizonlab/errors.hpp"
#include "horizonlab/stats.hpp"
#include "horizonlab/trajectory_io.hpp"

using namespace horizonlab;

TEST_CASE("pairwise sum") {
  std::vector<double> v(1000);
  std::iota(v.begin(), v.end(), 1.0);
  CHECK(stats::pairwise_sum(v) == 500500.0);
  CHECK(stats::pairwise_sum(std::vector<double>{}) == 0.0);
  CHECK(stats::mean(v) == 500.5);
  CHECK(stats::median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(stats::median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("fits") {
  std::vector<double> x, lin, ex;
  for (int i = 0; i < 10; ++i) {
    x.push_back(i);
    lin.push_back(2.0 + 0.5 * i);
    ex.push_back(3.0 * std::exp(0.2 * i));
  }
  const auto lf = stats::linear_fit(x, lin);
  CHECK(lf.slope == doctest::Approx(0.5));
  CHECK(lf.intercept == doctest::Approx(2.0));
  CHECK(lf.r2 == doctest::Approx(1.0));
  const auto ef = stats::exponential_fit(x, ex);
  CHECK(ef.rate == doctest::Approx(0.2));
  CHECK(ef.scale == doctest::Approx(3.0));
  CHECK(ef.r2 > stats::linear_fit(x, ex).r2);
  CHECK(stats::aic(1.0, 10, 2) < stats::aic(2.0, 10, 2));
}

TEST_CASE("spearman") {
  const std::vector<double> a{1, 2, 3, 4}, b{10, 20, 30, 40}, c{4, 3, 2, 1}, d{1, 1, 2, 2};
  CHECK(stats::spearman(a, b) == doctest::Approx(1.0));
  CHECK(stats::spearman(a, c) == doctest::Approx(-1.0));
  CHECK(stats::spearman(a, d) == doctest::Approx(std::sqrt(0.8)));
}

TEST_CASE("trajectory csv round trip") {
  const auto spec = dynamics::SystemSpec::lorenz();
  dynamics::Trajectory t = dynamics::generate(spec, 50, 0.04, 3);
  const dynamics::Trajectory back = dynamics::trajectory_from_csv(dynamics::trajectory_to_csv(t));
  CHECK(back.states == t.states);
  CHECK(back.dt == doctest::Approx(t.dt).epsilon(1e-12));

  const auto dir = std::filesystem::temp_directory_path() / "horizonlab_io_test";
  t.noise_sigma = 0.25;
  t = dynamics::normalize(t);
  dynamics::save_trajectory(dir / "traj", t, {"lorenz", spec.params});
  dynamics::TrajectoryMeta meta;
  const auto loaded = dynamics::load_trajectory(dir / "traj.csv", &meta);
  CHECK(loaded.states == t.states);
  CHECK(loaded.dt == t.dt);
  CHECK(loaded.t0 == t.t0);
  CHECK(loaded.seed == 3);
  CHECK(loaded.noise_sigma == 0.25);
  REQUIRE(loaded.normalization);
  CHECK(loaded.normalization->stddev == t.normalization->stddev);
  CHECK(meta.system == "lorenz");
  CHECK(meta.params == spec.params);
  std::filesystem::remove_all(dir);
}

TEST_CASE("ingestion errors name the row") {
  const auto row_of = [](const std::string& text) -> std::size_t {
    try {
      (void)dynamics::trajectory_from_csv(text);
    } catch (const IngestionError& e) {
      return e.row();
    }
    return 0;
  };
  CHECK(row_of("t,x0\n0,1\n1,nan\n2,3\n") == 2);
  CHECK(row_of("t,x0,x1\n0,1,2\n1,2\n") == 2);
  CHECK(row_of("t,x0\n0,1\n1,2\n2.5,3\n") == 3);
  CHECK(row_of("t,x0\n0,1\n1,abc\n") == 2);
  CHECK_THROWS_AS(dynamics::trajectory_from_csv("time,x\n0,1\n1,2\n"), IngestionError);
  CHECK_THROWS_AS(dynamics::trajectory_from_csv("t,x0\n0,1\n"), IngestionError);
}
