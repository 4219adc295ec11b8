#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "twopass/harness.hpp"
#include "twopass/model_io.hpp"

using namespace twopass;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = TWOPASS_SOURCE_DIR;
const std::string kCli = TWOPASS_CLI_PATH;

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("twopass_harness_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int exit_code(const std::string& args) {
  const std::string cmd = "\"" + kCli + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ExperimentConfig short_xor(std::uint64_t seed, int epochs) {
  auto cfg = ExperimentConfig::defaults_for(Task::Xor);
  cfg.train.seed = seed;
  cfg.train.epochs = epochs;
  return cfg;
}

}  // namespace

TEST_CASE("shipped configs parse and cover every reproducible cell once") {
  std::map<std::pair<Task, Algorithm>, int> cells;
  int count = 0;
  for (const auto& entry : fs::directory_iterator(kSource / "configs")) {
    if (entry.path().extension() != ".json") continue;
    const auto cfg = load_config(entry.path());
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.name == entry.path().stem().string());
    if (cfg.task != Task::Xor && cfg.backend == Backend::Dense) ++cells[{cfg.task, cfg.train.algorithm}];
    ++count;
  }
  CHECK(count >= 6);
  for (auto task : {Task::MnistMlp, Task::MnistColsplit})
    for (auto algo : {Algorithm::TwoPass, Algorithm::Backprop}) CHECK(cells[{task, algo}] == 1);
}

TEST_CASE("config parsing applies task defaults and rejects unknown keys") {
  const auto cfg = config_from_json(nlohmann::json::parse(R"({"task": "mnist_mlp", "lr": 0.5, "seed": 9})"));
  CHECK(cfg.task == Task::MnistMlp);
  CHECK(cfg.hidden == std::vector<Eigen::Index>{256});
  CHECK(cfg.train.learning_rate == 0.5);
  CHECK(cfg.train.seed == 9);
  CHECK(cfg.train.loss == LossMode::SoftmaxMSE);
  CHECK(config_from_json(to_json(cfg)) == cfg);

  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"task": "xor", "learning_rate": 1})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"task": "cifar"})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"epochs": "many"})")), ConfigError);
  auto bad = ExperimentConfig::defaults_for(Task::Xor);
  bad.train.loss = LossMode::SoftmaxMSE;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("metrics CSV format") {
  MetricsHistory h;
  h.records.push_back({0, 0, 0.25, std::nullopt});
  h.records.push_back({1, 0, 0.125, 0.5});
  const auto csv = metrics_csv(h);
  CHECK(csv.rfind("iteration,mse,accuracy\n", 0) == 0);
  CHECK(csv == "iteration,mse,accuracy\n0,0.25,\n1,0.125,0.5\n");
}

TEST_CASE("report round-trips through report.json") {
  TempDir dir;
  const auto result = run_experiment(short_xor(3, 20));
  emit_metrics(result.report, dir.path);
  CHECK(fs::exists(dir.path / "metrics.csv"));
  CHECK(!fs::exists(dir.path / "confusion.csv"));
  const auto back = report_from_json(read_json_file(dir.path / "report.json"));
  CHECK(back == result.report);
  CHECK(back.history.records.size() == 20);
  CHECK(slurp(dir.path / "metrics.csv") == metrics_csv(result.report.history));

  RunReport classified = result.report;
  ConfusionMatrix m = ConfusionMatrix::Zero(10, 10);
  m(3, 3) = 5;
  m(3, 8) = 2;
  m(7, 7) = 4;
  classified.confusion = m;
  classified.final_accuracy = 9.0 / 11.0;
  emit_metrics(classified, dir.path);
  CHECK(report_from_json(read_json_file(dir.path / "report.json")) == classified);
  const auto csv = slurp(dir.path / "confusion.csv");
  CHECK(csv.rfind("label,0,1,2,3,4,5,6,7,8,9\n", 0) == 0);
  CHECK(csv.find("\n3,0,0,0,5,0,0,0,0,2,0\n") != std::string::npos);
}

TEST_CASE("identical configs give byte-identical metrics") {
  const auto a = run_experiment(short_xor(4, 100));
  const auto b = run_experiment(short_xor(4, 100));
  CHECK(metrics_csv(a.report.history) == metrics_csv(b.report.history));
  CHECK(a.model == b.model);
  CHECK(metrics_csv(run_experiment(short_xor(5, 100)).report.history) != metrics_csv(a.report.history));
}

TEST_CASE("photonic and dense backends agree on XOR") {
  auto dense_cfg = short_xor(2, 50);
  auto photonic_cfg = dense_cfg;
  photonic_cfg.backend = Backend::Photonic;
  const auto dense = run_experiment(dense_cfg);
  const auto photonic = run_experiment(photonic_cfg);
  const Batch<double> x = xor_dataset().inputs.transpose();
  const auto yd = forward(dense.model, x).output();
  const auto yp = forward(photonic.model, x).output();
  CHECK((yd - yp).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(dense.report.final_mse == doctest::Approx(photonic.report.final_mse).epsilon(1e-6));
}

TEST_CASE("model documents round-trip") {
  const auto net = make_network<double>({{5, 4, ActivationKind::ReLU}, {4, 3, ActivationKind::Softmax}}, 6);
  const auto j = nlohmann::json::parse(to_json(net).dump());
  CHECK(j.at("layers")[0].at("in") == 5);
  CHECK(j.at("layers")[0].at("activation") == "relu");
  CHECK(network_from_json(j) == net);
  CHECK(!model_from_json(j).colsplit_axis);

  ColumnSplitConfig small;
  small.outputs_per_column = 3;
  const auto split = ColumnSplitNet::create(small, 2);
  const auto loaded = model_from_json(nlohmann::json::parse(to_json(split).dump()));
  REQUIRE(loaded.colsplit_axis);
  CHECK(*loaded.colsplit_axis == SplitAxis::Columns);
  CHECK(loaded.network == compose(split));

  auto broken = j;
  broken["layers"][0]["weights"].erase(0);
  CHECK_THROWS_AS(network_from_json(broken), DataError);
}

TEST_CASE("data directory resolution") {
  CHECK(resolve_data_dir("/some/dir") == fs::path("/some/dir"));
  ::setenv("TWOPASS_DATA_DIR", "/from/env", 1);
  CHECK(resolve_data_dir("") == fs::path("/from/env"));
  ::unsetenv("TWOPASS_DATA_DIR");
  CHECK_THROWS_AS(resolve_data_dir(""), DataError);
}

TEST_CASE("CLI exit codes") {
  TempDir dir;
  const std::string out = " --out-dir \"" + dir.path.string() + "/run\"";
  CHECK(exit_code("run --task xor --epochs 5" + out) == 0);
  CHECK(fs::exists(dir.path / "run" / "metrics.csv"));
  CHECK(fs::exists(dir.path / "run" / "report.json"));
  CHECK(fs::exists(dir.path / "run" / "model.json"));

  CHECK(exit_code("realize --model \"" + (dir.path / "run" / "model.json").string() + "\" --out \"" +
                  (dir.path / "meshes.json").string() + "\"") == 0);
  const auto meshes = read_json_file(dir.path / "meshes.json");
  CHECK(meshes.at("layers").size() == 2);
  CHECK(meshes["layers"][0].at("mesh_v").at("n") == 2);

  CHECK(exit_code("run --task xor --algorithm sideways" + out) == 1);
  CHECK(exit_code("run --config /nonexistent/config.json" + out) == 1);
  {
    std::ofstream bad(dir.path / "bad.json");
    bad << R"({"task": "xor", "colour": "blue"})";
  }
  CHECK(exit_code("run --config \"" + (dir.path / "bad.json").string() + "\"" + out) == 1);
  CHECK(exit_code("run --task mnist_mlp --data-dir /nonexistent/mnist" + out) == 2);
  CHECK(exit_code("run --task xor --lr 1e6 --epochs 200" + out) == 3);
  CHECK(exit_code("") == 1);
}

TEST_CASE("photonic MNIST-shaped run agrees with dense on a small slice") {
  const fs::path mnist = TWOPASS_MNIST_DIR;
  if (!fs::is_directory(mnist)) {
    MESSAGE("MNIST not found; skipping");
    return;
  }
  auto cfg = ExperimentConfig::defaults_for(Task::MnistMlp);
  cfg.data_dir = mnist.string();
  cfg.hidden = {16};
  cfg.train.epochs = 1;
  cfg.train.learning_rate = 1.0;
  cfg.train_limit = 256;
  cfg.test_limit = 200;
  const auto dense = run_experiment(cfg);
  cfg.backend = Backend::Photonic;
  const auto photonic = run_experiment(cfg);
  CHECK(dense.report.iterations == 4);
  CHECK(photonic.report.iterations == 4);
  for (std::size_t l = 0; l < dense.model.depth(); ++l)
    CHECK((dense.model.weights(l) - photonic.model.weights(l)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(dense.report.confusion->sum() == 200);
  CHECK(dense.report.final_accuracy == photonic.report.final_accuracy);
}
