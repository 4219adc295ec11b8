// twopass: run experiments and export photonic realizations.
//
//   twopass run --config configs/xor_twopass.json [--epochs 10 --seed 3 ...]
//   twopass realize --model runs/xor/model.json --out runs/xor/meshes.json
//
// Exit codes: 0 success, 1 config error, 2 data error, 3 divergence.

#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "twopass/harness.hpp"
#include "twopass/model_io.hpp"
#include "twopass/photonic.hpp"

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kDataError = 2, kDivergence = 3 };

struct RunOptions {
  std::string config_path;
  std::optional<std::string> task, algorithm, backend, data_dir, out_dir;
  std::optional<int> epochs, batch;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

int run(const RunOptions& opt) {
  using namespace twopass;
  ExperimentConfig cfg;
  if (!opt.config_path.empty()) {
    cfg = load_config(opt.config_path);
  } else {
    cfg = ExperimentConfig::defaults_for(opt.task ? task_from_string(*opt.task) : Task::Xor);
  }
  if (opt.task && task_from_string(*opt.task) != cfg.task) {
    // switching task re-bases on that task's defaults, keeping the run knobs
    auto rebased = ExperimentConfig::defaults_for(task_from_string(*opt.task));
    rebased.name = cfg.name;
    rebased.train.seed = cfg.train.seed;
    rebased.train.algorithm = cfg.train.algorithm;
    rebased.backend = cfg.backend;
    rebased.data_dir = cfg.data_dir;
    rebased.out_dir = cfg.out_dir;
    cfg = rebased;
  }
  if (opt.algorithm) cfg.train.algorithm = algorithm_from_string(*opt.algorithm);
  if (opt.backend) cfg.backend = backend_from_string(*opt.backend);
  if (opt.epochs) cfg.train.epochs = *opt.epochs;
  if (opt.lr) cfg.train.learning_rate = *opt.lr;
  if (opt.batch) cfg.train.batch_size = *opt.batch;
  if (opt.seed) cfg.train.seed = *opt.seed;
  if (opt.data_dir) cfg.data_dir = *opt.data_dir;
  if (opt.out_dir) cfg.out_dir = *opt.out_dir;
  if (cfg.out_dir.empty()) cfg.out_dir = "runs/" + cfg.name;

  const auto result = run_experiment(cfg);
  emit_metrics(result.report, cfg.out_dir);
  auto model = result.colsplit_axis ? to_json(decompose(result.model, kImageSide, *result.colsplit_axis))
                                    : to_json(result.model);
  write_json_file(std::filesystem::path(cfg.out_dir) / "model.json", model);

  const auto& r = result.report;
  std::printf("%s: %s/%s/%s iterations=%lld mse=%.6g", cfg.name.c_str(), std::string(to_string(cfg.task)).c_str(),
              std::string(to_string(cfg.train.algorithm)).c_str(), std::string(to_string(cfg.backend)).c_str(),
              static_cast<long long>(r.iterations), r.final_mse);
  if (r.final_accuracy) std::printf(" accuracy=%.2f%%", 100.0 * *r.final_accuracy);
  std::printf(" time=%.1fs -> %s\n", r.wall_time_s, cfg.out_dir.c_str());
  return kOk;
}

int realize(const std::string& model_path, const std::string& out_path) {
  using namespace twopass;
  const auto model = model_from_json(read_json_file(model_path));
  const auto hardware = PhotonicNetwork<double>::realize(model.network);
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < hardware.layers.size(); ++l) {
    auto j = to_json(hardware.layers[l]);
    j["activation"] = std::string(to_string(hardware.activations[l]));
    layers.push_back(std::move(j));
  }
  write_json_file(out_path, {{"layers", std::move(layers)}});
  std::printf("realized %zu layers, max unitarity residual %.3g -> %s\n", hardware.layers.size(),
              hardware.max_unitarity_residual(), out_path.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-pass forward training experiments for photonic neural networks"};
  app.require_subcommand(1);

  RunOptions opt;
  auto* run_cmd = app.add_subcommand("run", "Train and evaluate one experiment");
  run_cmd->add_option("--config", opt.config_path, "Experiment JSON config");
  run_cmd->add_option("--task", opt.task, "xor | mnist_mlp | mnist_colsplit");
  run_cmd->add_option("--algorithm", opt.algorithm, "twopass | backprop");
  run_cmd->add_option("--backend", opt.backend, "dense | photonic");
  run_cmd->add_option("--epochs", opt.epochs, "Training epochs");
  run_cmd->add_option("--lr", opt.lr, "Learning rate");
  run_cmd->add_option("--batch", opt.batch, "Mini-batch size");
  run_cmd->add_option("--seed", opt.seed, "Random seed");
  run_cmd->add_option("--data-dir", opt.data_dir, "MNIST directory (falls back to TWOPASS_DATA_DIR)");
  run_cmd->add_option("--out-dir", opt.out_dir, "Output directory (default runs/<name>)");

  std::string model_path, mesh_out;
  auto* realize_cmd = app.add_subcommand("realize", "Decompose a trained model into MZI mesh programs");
  realize_cmd->add_option("--model", model_path, "model.json written by 'run'")->required();
  realize_cmd->add_option("--out", mesh_out, "Output JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run_cmd) return run(opt);
    return realize(model_path, mesh_out);
  } catch (const twopass::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const twopass::ShapeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const twopass::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const twopass::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const twopass::NumericError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
}
