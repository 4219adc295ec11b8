#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "twopass/colsplit.hpp"
#include "twopass/trainer.hpp"

namespace twopass {

enum class Task { Xor, MnistMlp, MnistColsplit };
enum class Backend { Dense, Photonic };

std::string_view to_string(Task t);
std::string_view to_string(Backend b);
Task task_from_string(std::string_view s);
Backend backend_from_string(std::string_view s);

struct ExperimentConfig {
  std::string name = "experiment";
  Task task = Task::Xor;
  Backend backend = Backend::Dense;
  TrainConfig train;
  std::vector<Eigen::Index> hidden;  // hidden widths for Xor / MnistMlp
  ActivationKind hidden_activation = ActivationKind::ReLU;
  ActivationKind output_activation = ActivationKind::Softmax;
  Eigen::Index outputs_per_column = kImageSide;
  SplitAxis split_axis = SplitAxis::Columns;
  double projection_gain = kProjectionGain;
  std::string data_dir;
  std::string out_dir;
  std::size_t train_limit = 0;  // 0: full split
  std::size_t test_limit = 0;

  /// Task defaults: XOR is 2-8-1 (square, identity, mse); the MLP is
  /// 784-256-10 (relu, softmax, softmax_mse); the column split uses 28
  /// outputs per column.
  static ExperimentConfig defaults_for(Task task);

  void validate() const;

  bool operator==(const ExperimentConfig& other) const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);

/// Starts from the task defaults and applies every key present. Unknown keys
/// are rejected with ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);

ExperimentConfig load_config(const std::filesystem::path& path);

struct RunReport {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  double final_mse = 0.0;
  std::optional<double> final_accuracy;
  std::int64_t iterations = 0;
  double wall_time_s = 0.0;
  MetricsHistory history;
  std::optional<ConfusionMatrix> confusion;

  bool operator==(const RunReport& other) const;
};

nlohmann::json to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);

struct ExperimentResult {
  RunReport report;
  Network<double> model;  // composed form for column-split runs
  std::optional<SplitAxis> colsplit_axis;
};

/// Resolves the data directory: explicit value, then TWOPASS_DATA_DIR.
std::filesystem::path resolve_data_dir(const std::string& configured);

ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Writes metrics.csv, report.json and (for classification) confusion.csv.
void emit_metrics(const RunReport& report, const std::filesystem::path& dir);

/// The exact bytes of metrics.csv.
std::string metrics_csv(const MetricsHistory& history);

std::string confusion_csv(const ConfusionMatrix& m);

}  // namespace twopass
