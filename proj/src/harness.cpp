#include "twopass/harness.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "twopass/data.hpp"
#include "twopass/model_io.hpp"
#include "twopass/photonic.hpp"

namespace twopass {

std::string_view to_string(Task t) {
  switch (t) {
    case Task::Xor: return "xor";
    case Task::MnistMlp: return "mnist_mlp";
    case Task::MnistColsplit: return "mnist_colsplit";
  }
  return "xor";
}

std::string_view to_string(Backend b) { return b == Backend::Dense ? "dense" : "photonic"; }

Task task_from_string(std::string_view s) {
  if (s == "xor") return Task::Xor;
  if (s == "mnist_mlp") return Task::MnistMlp;
  if (s == "mnist_colsplit") return Task::MnistColsplit;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected xor, mnist_mlp or mnist_colsplit)");
}

Backend backend_from_string(std::string_view s) {
  if (s == "dense") return Backend::Dense;
  if (s == "photonic") return Backend::Photonic;
  throw ConfigError("unknown backend '" + std::string(s) + "' (expected dense or photonic)");
}

ExperimentConfig ExperimentConfig::defaults_for(Task task) {
  ExperimentConfig cfg;
  cfg.task = task;
  cfg.name = std::string(to_string(task));
  switch (task) {
    case Task::Xor:
      cfg.hidden = {8};
      cfg.hidden_activation = ActivationKind::Square;
      cfg.output_activation = ActivationKind::Identity;
      cfg.train.loss = LossMode::MSE;
      cfg.train.batch_size = 4;
      cfg.train.epochs = 960;
      cfg.train.learning_rate = 0.05;
      break;
    case Task::MnistMlp:
      cfg.hidden = {256};
      cfg.hidden_activation = ActivationKind::ReLU;
      cfg.output_activation = ActivationKind::Softmax;
      cfg.train.loss = LossMode::SoftmaxMSE;
      cfg.train.batch_size = 64;
      cfg.train.epochs = 30;
      break;
    case Task::MnistColsplit:
      cfg.hidden_activation = ActivationKind::ReLU;
      cfg.output_activation = ActivationKind::Softmax;
      cfg.train.loss = LossMode::SoftmaxMSE;
      cfg.train.batch_size = 64;
      cfg.train.epochs = 30;
      break;
  }
  return cfg;
}

void ExperimentConfig::validate() const {
  train.validate();
  if (!(projection_gain >= 0.0)) throw ConfigError("projection_gain must be non-negative");
  for (auto h : hidden)
    if (h < 1) throw ConfigError("hidden widths must be positive");
  if (task == Task::MnistColsplit) {
    if (outputs_per_column < 1) throw ConfigError("outputs_per_column must be positive");
    if (output_activation != ActivationKind::Softmax)
      throw ConfigError("the column-split aggregator is a softmax layer");
  }
  validate_loss_mode(train.loss, output_activation);
}

bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
  return to_json(*this) == to_json(o);
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  return {{"name", cfg.name},
          {"task", std::string(to_string(cfg.task))},
          {"algorithm", std::string(to_string(cfg.train.algorithm))},
          {"backend", std::string(to_string(cfg.backend))},
          {"epochs", cfg.train.epochs},
          {"lr", cfg.train.learning_rate},
          {"batch", cfg.train.batch_size},
          {"seed", cfg.train.seed},
          {"loss", std::string(to_string(cfg.train.loss))},
          {"lr_decay", cfg.train.lr_decay},
          {"lr_decay_at", cfg.train.lr_decay_at},
          {"max_iterations", cfg.train.max_iterations},
          {"shuffle", cfg.train.shuffle},
          {"hidden", cfg.hidden},
          {"hidden_activation", std::string(to_string(cfg.hidden_activation))},
          {"output_activation", std::string(to_string(cfg.output_activation))},
          {"outputs_per_column", cfg.outputs_per_column},
          {"split_axis", std::string(to_string(cfg.split_axis))},
          {"projection_gain", cfg.projection_gain},
          {"data_dir", cfg.data_dir},
          {"out_dir", cfg.out_dir},
          {"train_limit", cfg.train_limit},
          {"test_limit", cfg.test_limit}};
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  static const std::set<std::string> known = {
      "name",   "task",   "algorithm",  "backend",           "epochs",            "lr",
      "batch",  "seed",   "loss",       "lr_decay",          "lr_decay_at",       "max_iterations",
      "shuffle", "hidden", "hidden_activation", "output_activation", "outputs_per_column", "split_axis",
      "projection_gain", "data_dir", "out_dir", "train_limit", "test_limit", "comment"};
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  try {
    auto cfg = ExperimentConfig::defaults_for(task_from_string(j.value("task", std::string("xor"))));
    if (j.contains("name")) cfg.name = j["name"].get<std::string>();
    if (j.contains("algorithm")) cfg.train.algorithm = algorithm_from_string(j["algorithm"].get<std::string>());
    if (j.contains("backend")) cfg.backend = backend_from_string(j["backend"].get<std::string>());
    if (j.contains("epochs")) cfg.train.epochs = j["epochs"].get<int>();
    if (j.contains("lr")) cfg.train.learning_rate = j["lr"].get<double>();
    if (j.contains("batch")) cfg.train.batch_size = j["batch"].get<int>();
    if (j.contains("seed")) cfg.train.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("loss")) cfg.train.loss = loss_from_string(j["loss"].get<std::string>());
    if (j.contains("lr_decay")) cfg.train.lr_decay = j["lr_decay"].get<double>();
    if (j.contains("lr_decay_at")) cfg.train.lr_decay_at = j["lr_decay_at"].get<double>();
    if (j.contains("max_iterations")) cfg.train.max_iterations = j["max_iterations"].get<std::int64_t>();
    if (j.contains("shuffle")) cfg.train.shuffle = j["shuffle"].get<bool>();
    if (j.contains("hidden")) cfg.hidden = j["hidden"].get<std::vector<Eigen::Index>>();
    if (j.contains("hidden_activation"))
      cfg.hidden_activation = activation_from_string(j["hidden_activation"].get<std::string>());
    if (j.contains("output_activation"))
      cfg.output_activation = activation_from_string(j["output_activation"].get<std::string>());
    if (j.contains("outputs_per_column")) cfg.outputs_per_column = j["outputs_per_column"].get<Eigen::Index>();
    if (j.contains("split_axis")) cfg.split_axis = split_axis_from_string(j["split_axis"].get<std::string>());
    if (j.contains("projection_gain")) cfg.projection_gain = j["projection_gain"].get<double>();
    if (j.contains("data_dir")) cfg.data_dir = j["data_dir"].get<std::string>();
    if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("train_limit")) cfg.train_limit = j["train_limit"].get<std::size_t>();
    if (j.contains("test_limit")) cfg.test_limit = j["test_limit"].get<std::size_t>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

bool RunReport::operator==(const RunReport& o) const {
  const bool confusion_equal = confusion.has_value() == o.confusion.has_value() &&
                               (!confusion || (confusion->rows() == o.confusion->rows() &&
                                               confusion->cols() == o.confusion->cols() && *confusion == *o.confusion));
  return config == o.config && seed == o.seed && final_mse == o.final_mse && final_accuracy == o.final_accuracy &&
         iterations == o.iterations && wall_time_s == o.wall_time_s && history == o.history && confusion_equal;
}

nlohmann::json to_json(const RunReport& report) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& r : report.history.records)
    history.push_back({r.iteration, r.epoch, r.mse, r.accuracy ? nlohmann::json(*r.accuracy) : nlohmann::json()});
  nlohmann::json confusion;
  if (report.confusion) {
    confusion = nlohmann::json::array();
    for (Eigen::Index i = 0; i < report.confusion->rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index j = 0; j < report.confusion->cols(); ++j) row.push_back((*report.confusion)(i, j));
      confusion.push_back(std::move(row));
    }
  }
  return {{"config", to_json(report.config)},
          {"seed", report.seed},
          {"final_mse", report.final_mse},
          {"final_accuracy", report.final_accuracy ? nlohmann::json(*report.final_accuracy) : nlohmann::json()},
          {"iterations", report.iterations},
          {"wall_time_s", report.wall_time_s},
          {"history_columns", {"iteration", "epoch", "mse", "accuracy"}},
          {"history", std::move(history)},
          {"confusion", std::move(confusion)}};
}

RunReport report_from_json(const nlohmann::json& j) {
  try {
    RunReport report;
    report.config = config_from_json(j.at("config"));
    report.seed = j.at("seed").get<std::uint64_t>();
    report.final_mse = j.at("final_mse").get<double>();
    if (!j.at("final_accuracy").is_null()) report.final_accuracy = j["final_accuracy"].get<double>();
    report.iterations = j.at("iterations").get<std::int64_t>();
    report.wall_time_s = j.at("wall_time_s").get<double>();
    for (const auto& row : j.at("history")) {
      MetricRecord r{row.at(0).get<std::int64_t>(), row.at(1).get<int>(), row.at(2).get<double>(), std::nullopt};
      if (!row.at(3).is_null()) r.accuracy = row[3].get<double>();
      report.history.records.push_back(r);
    }
    if (!j.at("confusion").is_null()) {
      const auto& rows = j["confusion"];
      ConfusionMatrix m(static_cast<Eigen::Index>(rows.size()),
                        rows.empty() ? Eigen::Index{0} : static_cast<Eigen::Index>(rows[0].size()));
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index k = 0; k < m.cols(); ++k) m(i, k) = rows[static_cast<std::size_t>(i)].at(static_cast<std::size_t>(k)).get<std::int64_t>();
      report.confusion = m;
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed run report: ") + e.what());
  }
}

std::filesystem::path resolve_data_dir(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("TWOPASS_DATA_DIR"); env != nullptr && *env != '\0') return env;
  throw DataError("no data directory: pass --data-dir, set data_dir in the config, or export TWOPASS_DATA_DIR");
}

namespace {

std::vector<LayerSpec> mlp_specs(const ExperimentConfig& cfg, Eigen::Index in, Eigen::Index out) {
  std::vector<LayerSpec> specs;
  Eigen::Index prev = in;
  for (auto h : cfg.hidden) {
    specs.push_back({prev, h, cfg.hidden_activation});
    prev = h;
  }
  specs.push_back({prev, out, cfg.output_activation});
  return specs;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();

  Dataset train_set;
  Dataset test_set;
  if (cfg.task == Task::Xor) {
    train_set = xor_dataset();
    test_set = train_set;
  } else {
    auto splits = load_mnist(resolve_data_dir(cfg.data_dir));
    train_set = cfg.train_limit > 0 ? splits.train.head(cfg.train_limit) : std::move(splits.train);
    test_set = cfg.test_limit > 0 ? splits.test.head(cfg.test_limit) : std::move(splits.test);
  }

  const std::uint64_t seed = cfg.train.seed;
  const Eigen::Index classes = train_set.target_dim();

  PhotonicBackend<double> photonic;
  TrainHooks<double> hooks;
  PropagateFn<double> propagate = dense_propagator<double>();
  if (cfg.backend == Backend::Photonic) propagate = photonic.propagator();
  hooks.propagate = propagate;

  // Column-split runs evaluate the composed network on split-ordered inputs.
  if (cfg.task == Task::MnistColsplit) test_set.inputs = split_order(test_set.inputs, cfg.split_axis);
  if (test_set.is_classification()) {
    hooks.on_epoch_end = [&](const Network<double>& net, int) { return evaluate(net, test_set, propagate).accuracy; };
  }

  const auto projection =
      sample_projection<double>(train_set.input_dim(), classes, derive_seed(seed, 2), cfg.projection_gain);

  ExperimentResult result;
  MetricsHistory history;
  if (cfg.task == Task::MnistColsplit) {
    const ColumnSplitConfig split_cfg{kImageSide, cfg.outputs_per_column, classes, cfg.split_axis};
    auto net = ColumnSplitNet::create(split_cfg, derive_seed(seed, 1));
    auto trained = colsplit_train(net, train_set, projection, cfg.train, hooks);
    result.model = compose(trained.network);
    result.colsplit_axis = cfg.split_axis;
    history = std::move(trained.history);
  } else {
    auto net = make_network<double>(mlp_specs(cfg, train_set.input_dim(), classes), derive_seed(seed, 1));
    auto trained = train(std::move(net), train_set, projection, cfg.train, hooks);
    result.model = std::move(trained.network);
    history = std::move(trained.history);
  }

  const auto ev = evaluate(result.model, test_set, propagate);
  auto& report = result.report;
  report.config = cfg;
  report.seed = seed;
  report.final_mse = ev.mse;
  report.final_accuracy = ev.accuracy;
  report.iterations = static_cast<std::int64_t>(history.records.size());
  report.history = std::move(history);
  if (test_set.is_classification())
    report.confusion = confusion_matrix(ev.predictions, test_set.labels, static_cast<int>(classes));
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

}  // namespace

std::string metrics_csv(const MetricsHistory& history) {
  std::ostringstream out;
  out << "iteration,mse,accuracy\n";
  for (const auto& r : history.records) {
    out << r.iteration << ',' << format_double(r.mse) << ',';
    if (r.accuracy) out << format_double(*r.accuracy);
    out << '\n';
  }
  return out.str();
}

std::string confusion_csv(const ConfusionMatrix& m) {
  std::ostringstream out;
  out << "label";
  for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << j;
  out << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out << i;
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << m(i, j);
    out << '\n';
  }
  return out.str();
}

void emit_metrics(const RunReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create '" + dir.string() + "': " + ec.message());
  write_text(dir / "metrics.csv", metrics_csv(report.history));
  write_json_file(dir / "report.json", to_json(report));
  if (report.confusion) write_text(dir / "confusion.csv", confusion_csv(*report.confusion));
}

}  // namespace twopass
