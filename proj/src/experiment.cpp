#include "vjpsketch/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vjpsketch {

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string current;
  for (char c : text) {
    if (c == sep) {
      parts.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  parts.push_back(current);
  return parts;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  for (const std::string& part : split(text, ',')) {
    const std::string t = trim(part);
    if (!t.empty()) out.push_back(std::stod(t));
  }
  return out;
}

std::vector<std::size_t> layer_indices(const std::string& mode, std::size_t n_layers) {
  std::vector<std::size_t> indices;
  if (mode == "all") {
    for (std::size_t l = 0; l < n_layers; ++l) indices.push_back(l);
  } else if (mode == "first") {
    indices.push_back(0);
  } else if (mode == "last") {
    indices.push_back(n_layers - 1);
  } else {
    for (const std::string& part : split(mode, ',')) {
      const std::string t = trim(part);
      if (t.empty()) continue;
      const std::size_t l = std::stoul(t);
      require(l < n_layers, "layers: index " + t + " out of range");
      indices.push_back(l);
    }
    require(!indices.empty(), "layers: empty selection");
  }
  return indices;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  const auto result = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, result.ptr);
}

double median(std::vector<double> values) {
  require(!values.empty(), "median of empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double population_std(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size()));
}

void ExperimentConfig::apply_defaults() {
  if (full_protocol) {
    epochs = 50;
    if (lr_grid.empty())
      for (int i = 0; i <= 12; ++i) lr_grid.push_back(std::pow(10.0, -0.25 * i));
  }
  if (lr_grid.empty())
    lr_grid = {std::pow(10.0, -0.75), 1e-1, std::pow(10.0, -1.25)};
  if (widths.empty()) {
    if (dataset == "mnist") {
      widths = {784, 64, 64, 10};
    } else {
      widths = {synthetic.dim, 32, static_cast<std::size_t>(synthetic.n_classes)};
    }
  }
  method.validate();
  require(!budgets.empty(), "config: budgets must be non-empty");
  for (double p : budgets)
    require(p > 0.0 && p <= 1.0, "config: budgets must lie in (0,1]");
  require(!seeds.empty(), "config: seeds must be non-empty");
  require(epochs >= 1 && batch_size >= 1, "config: epochs and batch_size must be >= 1");
  require(val_fraction > 0.0 && val_fraction < 1.0, "config: val_fraction in (0,1)");
}

void ExperimentConfig::apply_key_value(const std::string& key, const std::string& value) {
  if (key == "dataset") dataset = value;
  else if (key == "mnist_dir") mnist_dir = value;
  else if (key == "mnist_subset") mnist_subset = std::stoul(value);
  else if (key == "synthetic_samples") synthetic.n_samples = std::stoul(value);
  else if (key == "synthetic_dim") synthetic.dim = std::stoul(value);
  else if (key == "synthetic_classes") synthetic.n_classes = std::stoi(value);
  else if (key == "synthetic_seed") synthetic.seed = std::stoull(value);
  else if (key == "synthetic_separation") synthetic.separation = std::stod(value);
  else if (key == "val_fraction") val_fraction = std::stod(value);
  else if (key == "widths") {
    widths.clear();
    for (double v : parse_doubles(value)) widths.push_back(static_cast<std::size_t>(v));
  } else if (key == "epochs") epochs = std::stoul(value);
  else if (key == "batch_size") batch_size = std::stoul(value);
  else if (key == "clip_norm") clip_norm = std::stod(value);
  else if (key == "method") {
    const SketchOperatorSpec parsed = SketchOperatorSpec::parse(value);
    method.kind = parsed.kind;
    method.squared = parsed.squared;
    method.correlated = parsed.correlated;
  } else if (key == "squared") method.squared = value == "true" || value == "1";
  else if (key == "correlated") method.correlated = value == "true" || value == "1";
  else if (key == "budgets" || key == "budget") budgets = parse_doubles(value);
  else if (key == "layers") layers = value;
  else if (key == "lr_grid") lr_grid = parse_doubles(value);
  else if (key == "seeds") {
    seeds.clear();
    for (double v : parse_doubles(value)) seeds.push_back(static_cast<std::uint64_t>(v));
  } else if (key == "out") out_dir = value;
  else if (key == "full") full_protocol = value == "true" || value == "1";
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  ExperimentConfig config;
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::size_t eq = t.find('=');
    require(eq != std::string::npos, "config: expected key = value, got '" + t + "'");
    config.apply_key_value(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return config;
}

std::string ExperimentConfig::echo() const {
  std::ostringstream out;
  out << "dataset = " << dataset << "\n";
  if (dataset == "mnist") {
    out << "mnist_dir = " << mnist_dir << "\n";
    out << "mnist_subset = " << mnist_subset << "\n";
  } else {
    out << "synthetic_samples = " << synthetic.n_samples << "\n";
    out << "synthetic_dim = " << synthetic.dim << "\n";
    out << "synthetic_classes = " << synthetic.n_classes << "\n";
    out << "synthetic_seed = " << synthetic.seed << "\n";
    out << "synthetic_separation = " << format_double(synthetic.separation) << "\n";
  }
  out << "val_fraction = " << format_double(val_fraction) << "\n";
  out << "widths = ";
  for (std::size_t i = 0; i < widths.size(); ++i)
    out << (i ? "," : "") << widths[i];
  out << "\n";
  out << "epochs = " << epochs << "\n";
  out << "batch_size = " << batch_size << "\n";
  out << "clip_norm = " << format_double(clip_norm) << "\n";
  out << "method = " << method.name() << "\n";
  out << "budgets = ";
  for (std::size_t i = 0; i < budgets.size(); ++i)
    out << (i ? "," : "") << format_double(budgets[i]);
  out << "\n";
  out << "layers = " << layers << "\n";
  out << "lr_grid = ";
  for (std::size_t i = 0; i < lr_grid.size(); ++i)
    out << (i ? "," : "") << format_double(lr_grid[i]);
  out << "\n";
  out << "seeds = ";
  for (std::size_t i = 0; i < seeds.size(); ++i)
    out << (i ? "," : "") << seeds[i];
  out << "\n";
  out << "full = " << (full_protocol ? "true" : "false") << "\n";
  return out.str();
}

Dataset load_configured_dataset(const ExperimentConfig& config) {
  if (config.dataset == "synthetic") return make_synthetic(config.synthetic);
  require(config.dataset == "mnist", "config: dataset must be 'synthetic' or 'mnist'");
  Dataset all = load_idx(config.mnist_dir + "/train-images-idx3-ubyte",
                         config.mnist_dir + "/train-labels-idx1-ubyte");
  if (config.mnist_subset > 0 && config.mnist_subset < all.size())
    return all.slice(0, config.mnist_subset);
  return all;
}

void split_train_val(const Dataset& all, double val_fraction, Dataset* train, Dataset* val) {
  const std::size_t n = all.size();
  std::size_t n_val = static_cast<std::size_t>(std::lround(val_fraction * double(n)));
  n_val = std::min(std::max<std::size_t>(n_val, 1), n - 1);
  *train = all.slice(0, n - n_val);
  *val = all.slice(n - n_val, n);
}

RunRecord train_single(const ExperimentConfig& config, const Dataset& train,
                       const Dataset& val, double budget, std::uint64_t seed, double lr,
                       MlpModel* final_model) {
  RunRecord record;
  record.budget = budget;
  record.method = config.method.name();
  record.layers = config.layers;
  record.seed = seed;
  record.lr = lr;
  record.status = "ok";

  Rng root(seed);
  Rng init_stream = root.derive(0x696e6974);
  MlpModel model = MlpModel::init_kaiming(config.widths, init_stream);

  if (config.method.kind != SketchKind::ExactIdentity) {
    SketchOperatorSpec spec = config.method;
    spec.budget_fraction = budget;
    spec.budget_rank = 0;
    for (std::size_t l : layer_indices(config.layers, model.layers.size()))
      model.layers[l].sketch = spec;
  }
  model.validate();

  Rng shuffle_root = root.derive(0x73687566);
  const std::size_t n = train.size();
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_stream = shuffle_root.derive(epoch);
    const std::vector<std::size_t> order = shuffled_indices(n, shuffle_stream);

    double loss_sum = 0.0;
    bool diverged = false;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const std::size_t b = stop - start;
      Matrix x(b, train.dim());
      std::vector<int> y(b);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t src = order[start + i];
        y[i] = train.labels[src];
        for (std::size_t j = 0; j < train.dim(); ++j) x(i, j) = train.images(src, j);
      }

      ForwardCache cache;
      forward(model, x, &cache);
      const double loss = softmax_cross_entropy(cache.logits, y);
      loss_sum += loss * static_cast<double>(b);

      try {
        const BackwardState grads =
            backward(model, cache, y, BackwardMode::Sketched, root, step);
        sgd_step(model, grads, lr, config.clip_norm);
      } catch (const std::runtime_error&) {
        diverged = true;
      }
      ++step;
      if (!std::isfinite(loss)) diverged = true;
      if (diverged) break;
    }

    if (diverged) {
      record.status = "diverged";
      break;
    }

    record.train_loss.push_back(loss_sum / static_cast<double>(n));
    const Matrix val_logits = forward(model, val.images);
    const double accuracy = 100.0 * static_cast<double>(count_correct(val_logits, val.labels)) /
                            static_cast<double>(val.size());
    record.val_accuracy.push_back(accuracy);
  }

  if (!record.val_accuracy.empty()) {
    record.best_val_accuracy =
        *std::max_element(record.val_accuracy.begin(), record.val_accuracy.end());
    record.final_train_loss = record.train_loss.back();
  }
  if (record.status != "ok") record.best_val_accuracy = 0.0;
  if (final_model) *final_model = std::move(model);
  return record;
}

ExperimentResult run_experiment(const ExperimentConfig& raw_config) {
  ExperimentConfig config = raw_config;
  config.apply_defaults();

  const Dataset all = load_configured_dataset(config);
  Dataset train, val;
  split_train_val(all, config.val_fraction, &train, &val);
  require(config.widths.front() == train.dim(), "config: input width must match the data");

  ExperimentResult result;
  for (double budget : config.budgets) {
    std::vector<double> per_seed_best;
    for (std::uint64_t seed : config.seeds) {
      bool found = false;
      double best_accuracy = 0.0;
      for (double lr : config.lr_grid) {
        result.runs.push_back(train_single(config, train, val, budget, seed, lr));
        const RunRecord& run = result.runs.back();
        if (run.status == "ok" && (!found || run.best_val_accuracy > best_accuracy)) {
          found = true;
          best_accuracy = run.best_val_accuracy;
        }
      }
      if (found) per_seed_best.push_back(best_accuracy);
    }
    SummaryRow row;
    row.budget = budget;
    row.method = config.method.name();
    row.layers = config.layers;
    row.n_seeds = per_seed_best.size();
    if (!per_seed_best.empty()) {
      row.best_val_accuracy_median = median(per_seed_best);
      row.std_acc = population_std(per_seed_best);
    }
    result.summary.push_back(row);
  }

  namespace fs = std::filesystem;
  fs::create_directories(config.out_dir);

  {
    std::ofstream out(config.out_dir + "/config.txt", std::ios::binary);
    out << config.echo();
  }
  {
    std::ofstream out(config.out_dir + "/summary.csv", std::ios::binary);
    out << "p,method,layers,best_val_accuracy_median,std_acc,n_seeds\n";
    for (const SummaryRow& row : result.summary)
      out << format_double(row.budget) << ',' << row.method << ',' << row.layers << ','
          << format_double(row.best_val_accuracy_median) << ','
          << format_double(row.std_acc) << ',' << row.n_seeds << '\n';
  }
  {
    std::ofstream out(config.out_dir + "/runs.csv", std::ios::binary);
    out << "p,method,layers,seed,lr,status,best_val_accuracy,final_train_loss\n";
    for (const RunRecord& run : result.runs)
      out << format_double(run.budget) << ',' << run.method << ',' << run.layers << ','
          << run.seed << ',' << format_double(run.lr) << ',' << run.status << ','
          << format_double(run.best_val_accuracy) << ','
          << format_double(run.final_train_loss) << '\n';
  }
  {
    std::ofstream out(config.out_dir + "/curves.csv", std::ios::binary);
    out << "p,method,layers,seed,lr,epoch,train_loss,val_accuracy\n";
    for (const RunRecord& run : result.runs)
      for (std::size_t e = 0; e < run.val_accuracy.size(); ++e)
        out << format_double(run.budget) << ',' << run.method << ',' << run.layers << ','
            << run.seed << ',' << format_double(run.lr) << ',' << e << ','
            << format_double(run.train_loss[e]) << ','
            << format_double(run.val_accuracy[e]) << '\n';
  }
  return result;
}

}  // namespace vjpsketch
