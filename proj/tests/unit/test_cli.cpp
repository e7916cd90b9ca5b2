#include <filesystem>
#include <sstream>

#include <unistd.h>

#include "doctest.h"
#include "horizonlab/cli.hpp"
#include "horizonlab/trajectory_io.hpp"

using namespace horizonlab;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "horizonlab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("horizonlab_cli_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

void write(const std::string& path, const std::string& text) { dynamics::write_file_atomic(path, text); }

const char* kSmallTrain = R"({"data": {"system": "limit_cycle", "n_samples": 300},
  "model": {"width_factor": 4, "n_blocks": 1}, "train": {"batch_size": 64}, "loss": {"T": 2}})";

}  // namespace

TEST_CASE("simulate is deterministic and rejects the external system") {
  TempDir tmp;
  for (const char* stem : {"a", "b"})
    REQUIRE(invoke({"simulate", "--system", "lorenz", "--dt", "0.04", "--steps", "1000", "--seed", "1", "--out",
                 tmp / stem})
                .code == 0);
  CHECK(dynamics::read_file(tmp / "a.csv") == dynamics::read_file(tmp / "b.csv"));
  CHECK(dynamics::read_file(tmp / "a.json") == dynamics::read_file(tmp / "b.json"));

  const auto ext = invoke({"simulate", "--system", "external", "--out", tmp / "e"});
  CHECK(ext.code == 2);
  CHECK(ext.err.find("plugin") != std::string::npos);
  CHECK(invoke({"simulate", "--system", "nosuch"}).code == 2);
  CHECK(invoke({"simulate"}).code == 2);
}

TEST_CASE("food web simulation stays non-negative") {
  TempDir tmp;
  REQUIRE(invoke({"simulate", "--system", "food_web", "--dt", "2.0", "--steps", "2000", "--out", tmp / "fw"}).code == 0);
  const auto t = dynamics::load_trajectory(tmp / "fw.csv");
  CHECK(t.size() == 2001);
  CHECK(t.states.allFinite());
  CHECK(t.states.minCoeff() >= 0.0);
}

TEST_CASE("ingest round trip, rejection and normalization") {
  TempDir tmp;
  REQUIRE(invoke({"simulate", "--system", "limit_cycle", "--steps", "200", "--out", tmp / "s"}).code == 0);
  REQUIRE(invoke({"ingest", "--in", tmp / "s.csv", "--out", tmp / "i"}).code == 0);
  CHECK(dynamics::read_file(tmp / "s.csv") == dynamics::read_file(tmp / "i.csv"));

  write(tmp / "nan.csv", "t,x0,x1\n0,1,2\n1,2,3\n2,nan,4\n3,5,6\n");
  const auto bad = invoke({"ingest", "--in", tmp / "nan.csv", "--out", tmp / "n"});
  CHECK(bad.code == 4);
  CHECK(bad.err.find("row 3") != std::string::npos);

  write(tmp / "uneven.csv", "t,x0\n0,1\n1,2\n2.5,3\n");
  CHECK(invoke({"ingest", "--in", tmp / "uneven.csv", "--out", tmp / "u"}).code == 4);

  REQUIRE(invoke({"ingest", "--in", tmp / "s.csv", "--out", tmp / "z", "--normalize"}).code == 0);
  const auto z = dynamics::load_trajectory(tmp / "z.csv");
  for (int j = 0; j < z.dim(); ++j) CHECK(std::abs(z.states.col(j).mean()) < 1e-12);
}

TEST_CASE("config validation lists every offending key") {
  TempDir tmp;
  write(tmp / "bad.json", R"({"data": {"system": "lorenz", "bogus": 1}, "nope": 2, "train": {"etaa": 1}})");
  const auto r = invoke({"train", "--config", tmp / "bad.json", "--out", tmp / "o"});
  CHECK(r.code == 2);
  for (const char* key : {"data.bogus", "nope", "train.etaa"}) CHECK(r.err.find(key) != std::string::npos);
  CHECK_FALSE(fs::exists(tmp / "o"));

  write(tmp / "type.json", R"({"train": {"eta": "fast"}})");
  CHECK(invoke({"train", "--config", tmp / "type.json", "--out", tmp / "o2"}).code == 2);
  CHECK_THROWS(cli::resolve_config("simulate", nlohmann::json::object()));
}

TEST_CASE("train reruns and manifest replays are bitwise identical") {
  TempDir tmp;
  write(tmp / "t.json", kSmallTrain);
  REQUIRE(invoke({"train", "--config", tmp / "t.json", "--budget", "epochs:4", "--seed", "7", "--out", tmp / "r1"}).code ==
          0);
  REQUIRE(invoke({"train", "--config", tmp / "t.json", "--budget", "epochs:4", "--seed", "7", "--out", tmp / "r2"}).code ==
          0);
  CHECK(dynamics::read_file(tmp / "r1/loss_curve.csv") == dynamics::read_file(tmp / "r2/loss_curve.csv"));

  REQUIRE(invoke({"train", "--config", tmp / "r1/manifest.json", "--out", tmp / "r3"}).code == 0);
  CHECK(dynamics::read_file(tmp / "r1/loss_curve.csv") == dynamics::read_file(tmp / "r3/loss_curve.csv"));
  CHECK(dynamics::read_file(tmp / "r1/model.bin") == dynamics::read_file(tmp / "r3/model.bin"));

  const auto manifest = nlohmann::json::parse(dynamics::read_file(tmp / "r1/manifest.json"));
  CHECK(manifest.at("version") == std::string(cli::kVersion));
  CHECK(manifest.at("config").at("train").at("budget") == "epochs:4");
  CHECK(manifest.at("config").at("seed") == 7);
  CHECK(manifest.at("status") == "ok");
}

TEST_CASE("divergent training exits with the numeric code") {
  TempDir tmp;
  write(tmp / "d.json", R"({"data": {"system": "limit_cycle", "n_samples": 300},
    "model": {"width_factor": 4, "n_blocks": 1},
    "train": {"optimizer": "sgd", "eta": 1e4, "batch_size": 64, "budget": "epochs:20"}, "loss": {"T": 8}})");
  const auto r = invoke({"train", "--config", tmp / "d.json", "--out", tmp / "d"});
  CHECK(r.code == 3);
  const auto manifest = nlohmann::json::parse(dynamics::read_file(tmp / "d/manifest.json"));
  CHECK(manifest.at("status") == "diverged");
}

TEST_CASE("probe grad_ratio on a checkpoint") {
  TempDir tmp;
  write(tmp / "t.json", kSmallTrain);
  REQUIRE(invoke({"train", "--config", tmp / "t.json", "--budget", "epochs:2", "--out", tmp / "r"}).code == 0);
  REQUIRE(invoke({"probe", "--config", tmp / "t.json", "--kind", "grad_ratio", "--checkpoint", tmp / "r/model", "--out",
               tmp / "p"})
              .code == 0);
  const std::string csv = dynamics::read_file(tmp / "p/probe.csv");
  CHECK(csv.rfind("T,g\n1,1\n", 0) == 0);
}

TEST_CASE("sweep over a 2x2 grid emits four rows") {
  TempDir tmp;
  write(tmp / "s.json", R"({"data": {"system": "limit_cycle", "n_samples": 300},
    "model": {"width_factor": 4, "n_blocks": 1}, "train": {"batch_size": 64, "budget": "epochs:2"},
    "sweep": {"T": [1, 2], "eta": [1e-3, 1e-2], "sizes": [{"width_factor": 4, "n_blocks": 1}]}})");
  REQUIRE(invoke({"sweep", "--config", tmp / "s.json", "--out", tmp / "sw"}).code == 0);
  const std::string csv = dynamics::read_file(tmp / "sw/sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("schedule, curriculum, lyapunov and scan outputs") {
  TempDir tmp;
  write(tmp / "c.json", R"({"data": {"system": "limit_cycle", "n_samples": 300},
    "model": {"width_factor": 4, "n_blocks": 1}, "train": {"batch_size": 64, "budget": "epochs:4"},
    "curriculum": {"T_max": 2}})");
  REQUIRE(invoke({"curriculum", "--config", tmp / "c.json", "--out", tmp / "cu"}).code == 0);
  CHECK(fs::exists(tmp / "cu/phases.csv"));

  write(tmp / "sc.json", R"({"data": {"system": "limit_cycle", "n_samples": 300},
    "model": {"width_factor": 4, "n_blocks": 1}, "train": {"batch_size": 64},
    "schedule": {"wall_limit_seconds": 0.5, "lookahead_epochs": 2, "trend_fit": "linear"}})");
  REQUIRE(invoke({"schedule", "--config", tmp / "sc.json", "--out", tmp / "sc"}).code == 0);
  CHECK(dynamics::read_file(tmp / "sc/trace.csv").rfind("wall_time,T,eta,phase,val_loss,grad_norm,action\n", 0) == 0);

  write(tmp / "l.json", R"({"data": {"system": "lorenz"}, "lyapunov": {"n_steps": 2000, "discard": 100}})");
  REQUIRE(invoke({"lyapunov", "--config", tmp / "l.json", "--out", tmp / "ly"}).code == 0);
  CHECK(dynamics::read_file(tmp / "ly/spectrum.csv").rfind("index,exponent\n", 0) == 0);

  write(tmp / "p.json", R"({"data": {"system": "lorenz", "n_samples": 101},
    "probe": {"kind": "scan1d", "dims": [0], "ranges": [[8, 12]], "n_per_dim": 5, "scan_T": 10}})");
  REQUIRE(invoke({"probe", "--config", tmp / "p.json", "--out", tmp / "scan"}).code == 0);
  const std::string csv = dynamics::read_file(tmp / "scan/probe.csv");
  CHECK(csv.find("\n10,0,0\n") != std::string::npos);
}
