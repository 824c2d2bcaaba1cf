#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vjpsketch/data.hpp"
#include "vjpsketch/mlp.hpp"

namespace vjpsketch {

struct ExperimentConfig {
  // dataset
  std::string dataset = "synthetic";  // "synthetic" | "mnist"
  std::string mnist_dir = "data/mnist10k";
  std::size_t mnist_subset = 0;  // 0 = whole file, else first N samples
  SyntheticSpec synthetic;
  double val_fraction = 1.0 / 6.0;  // validation = trailing fraction of the file

  // model / optimizer
  std::vector<std::size_t> widths;  // empty = derived from the dataset
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double clip_norm = 1.0;

  // method under test; budget comes from `budgets`, swept one row per value
  SketchOperatorSpec method;
  std::vector<double> budgets = {1.0};
  std::string layers = "all";  // all | first | last | comma-separated 0-based indices

  std::vector<double> lr_grid;  // empty = 3-point grid centered at 1e-1
  std::vector<std::uint64_t> seeds = {1, 2, 3};

  std::string out_dir = "out";
  bool full_protocol = false;  // 50 epochs, 13-point LR grid

  void apply_defaults();
  std::string echo() const;

  static ExperimentConfig from_file(const std::string& path);
  void apply_key_value(const std::string& key, const std::string& value);
};

struct RunRecord {
  double budget = 1.0;
  std::string method;
  std::string layers;
  std::uint64_t seed = 0;
  double lr = 0.0;
  std::string status;  // "ok" | "diverged"
  double best_val_accuracy = 0.0;
  double final_train_loss = 0.0;
  std::vector<double> train_loss;    // per epoch
  std::vector<double> val_accuracy;  // per epoch, percent
};

struct SummaryRow {
  double budget = 1.0;
  std::string method;
  std::string layers;
  double best_val_accuracy_median = 0.0;
  double std_acc = 0.0;
  std::size_t n_seeds = 0;
};

struct ExperimentResult {
  std::vector<RunRecord> runs;
  std::vector<SummaryRow> summary;
};

/// Train every (budget, seed, lr) cell, select the best lr per seed by best
/// validation accuracy, aggregate seeds (median, population std), and write
/// summary.csv / runs.csv / curves.csv plus a config echo into out_dir.
/// Diverged runs become "diverged" rows and drop out of the aggregation.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Single training run (exposed for tests and the p=1 equivalence check).
RunRecord train_single(const ExperimentConfig& config, const Dataset& train,
                       const Dataset& val, double budget, std::uint64_t seed, double lr,
                       MlpModel* final_model = nullptr);

Dataset load_configured_dataset(const ExperimentConfig& config);
void split_train_val(const Dataset& all, double val_fraction, Dataset* train, Dataset* val);

std::string format_double(double v);
double median(std::vector<double> values);
double population_std(const std::vector<double>& values);

}  // namespace vjpsketch
