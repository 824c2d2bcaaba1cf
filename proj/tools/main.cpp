#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vjpsketch/diagnostics.hpp"
#include "vjpsketch/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Randomized-VJP training harness: budget sweeps, layer placement, "
               "LR grids, multi-seed aggregation, CSV emission"};

  std::string config_path, out_dir, method, layers, dataset, lr_grid, budgets, seeds,
      widths, mnist_dir;
  std::size_t epochs = 0, batch_size = 0, mnist_subset = 0, diag_draws = 20000;
  double clip_norm = -1.0;
  bool diagnostics = false, full = false, inject_bug = false;
  std::string diag_json;

  app.add_option("--config", config_path, "key = value config file");
  app.add_option("--seed", seeds, "comma-separated seeds");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--method", method,
                 "exact | per_element | per_sample | per_column | l1 | l2 | var | gsv | "
                 "ds | rcs, with optional _squared / _indep suffixes");
  app.add_option("--budget", budgets, "comma-separated budgets in (0,1]");
  app.add_option("--layers", layers, "all | first | last | comma-separated 0-based indices");
  app.add_option("--epochs", epochs, "training epochs");
  app.add_option("--lr-grid", lr_grid, "comma-separated learning rates");
  app.add_option("--dataset", dataset, "synthetic | mnist");
  app.add_option("--mnist-dir", mnist_dir, "directory with IDX files");
  app.add_option("--mnist-subset", mnist_subset, "use only the first N samples");
  app.add_option("--widths", widths, "comma-separated layer widths incl. input/output");
  app.add_option("--batch-size", batch_size, "minibatch size");
  app.add_option("--clip-norm", clip_norm, "global gradient clipping norm");
  app.add_flag("--full", full, "full protocol: 50 epochs, 13-point LR grid");
  app.add_flag("--diagnostics", diagnostics, "run the verification suites and exit");
  app.add_option("--diag-draws", diag_draws, "Monte-Carlo draws per diagnostic check");
  app.add_option("--diag-json", diag_json, "write the diagnostics report as JSON");
  app.add_flag("--inject-bug", inject_bug,
               "test-only: drop a rescale so the unbiasedness check must fail");

  CLI11_PARSE(app, argc, argv);

  try {
    if (diagnostics) {
      vjpsketch::DiagnosticsConfig config;
      config.n_draws = diag_draws;
      config.inject_bug = inject_bug;
      config.json_out = diag_json;
      if (!seeds.empty()) config.seed = std::stoull(seeds);
      return vjpsketch::report_diagnostics(vjpsketch::run_diagnostics(config), config);
    }

    vjpsketch::ExperimentConfig config;
    if (!config_path.empty()) config = vjpsketch::ExperimentConfig::from_file(config_path);
    if (!dataset.empty()) config.apply_key_value("dataset", dataset);
    if (!mnist_dir.empty()) config.apply_key_value("mnist_dir", mnist_dir);
    if (mnist_subset > 0) config.mnist_subset = mnist_subset;
    if (!method.empty()) config.apply_key_value("method", method);
    if (!budgets.empty()) config.apply_key_value("budgets", budgets);
    if (!layers.empty()) config.apply_key_value("layers", layers);
    if (epochs > 0) config.epochs = epochs;
    if (batch_size > 0) config.batch_size = batch_size;
    if (clip_norm >= 0.0) config.clip_norm = clip_norm;
    if (!lr_grid.empty()) config.apply_key_value("lr_grid", lr_grid);
    if (!seeds.empty()) config.apply_key_value("seeds", seeds);
    if (!widths.empty()) config.apply_key_value("widths", widths);
    if (!out_dir.empty()) config.out_dir = out_dir;
    if (full) config.full_protocol = true;

    const vjpsketch::ExperimentResult result = vjpsketch::run_experiment(config);
    for (const vjpsketch::SummaryRow& row : result.summary)
      std::printf("p=%-8s method=%-20s layers=%-6s median_acc=%-8s std=%-8s seeds=%zu\n",
                  vjpsketch::format_double(row.budget).c_str(), row.method.c_str(),
                  row.layers.c_str(),
                  vjpsketch::format_double(row.best_val_accuracy_median).c_str(),
                  vjpsketch::format_double(row.std_acc).c_str(), row.n_seeds);
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
