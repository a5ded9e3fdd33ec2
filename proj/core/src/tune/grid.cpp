#include "slab/tune/grid.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "slab/error.hpp"
#include "slab/numerics/rng.hpp"
#include "slab/util/io.hpp"

namespace slab {

GridSpace GridSpace::default_space() {
  return {{2e-5, 3e-5, 4e-5, 5e-5}, {16, 32}, {0.1}, {3, 4}, false};
}

GridSpace GridSpace::expanded_space() {
  return {{1e-5, 2e-5, 3e-5, 4e-5, 5e-5}, {4, 8, 16, 32}, {0.1, 0.2}, {}, true};
}

void GridSpace::validate() const {
  require(!learning_rates.empty() && !batch_sizes.empty() && !dropouts.empty(), ErrorCode::kInvalidArgument,
          "grid: learning rate, batch size and dropout sets must be non-empty");
  require(early_stopping == epochs.empty(), ErrorCode::kInvalidArgument,
          "grid: use either fixed epoch counts or early stopping, not both");
  for (double lr : learning_rates)
    require(lr > 0.0 && std::isfinite(lr), ErrorCode::kInvalidArgument, "grid: learning rates must be positive");
  for (auto b : batch_sizes) require(b >= 1, ErrorCode::kInvalidArgument, "grid: batch sizes must be >= 1");
  for (double d : dropouts)
    require(d >= 0.0 && d < 1.0, ErrorCode::kInvalidArgument, "grid: dropout rates must be in [0, 1)");
  for (int e : epochs)
    require(e >= 1 && e <= kSafetyCap, ErrorCode::kInvalidArgument,
            "grid: epoch counts must be in [1, " + std::to_string(kSafetyCap) + "]");
}

namespace {

template <class T>
std::vector<T> sorted_unique(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

std::vector<TrialPoint> enumerate_grid(const GridSpace& space) {
  space.validate();
  const auto epochs = space.early_stopping ? std::vector<int>{0} : sorted_unique(space.epochs);
  std::vector<TrialPoint> out;
  for (double lr : sorted_unique(space.learning_rates))
    for (auto b : sorted_unique(space.batch_sizes))
      for (double d : sorted_unique(space.dropouts))
        for (int e : epochs) out.push_back({lr, b, d, e});
  return out;
}

std::string to_string(TrialStatus status) { return status == TrialStatus::kOk ? "ok" : "failed"; }

bool EarlyStopper::update(double loss) {
  ++epochs_;
  if (epochs_ == 1 || loss < best_) {
    best_ = loss;
    best_epoch_ = epochs_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

TrialResult run_trial(const FineTuneTask& task, const TrialConfig& config, std::unique_ptr<TrialModel>* model_out) {
  const auto start = std::chrono::steady_clock::now();
  TrialResult result;
  result.config = config;
  const TrialPoint& p = config.point;
  require(p.batch_size >= 1 && p.learning_rate > 0.0, ErrorCode::kInvalidArgument, "run_trial: invalid trial point");
  const int cap = p.epochs > 0 ? p.epochs : kSafetyCap;
  EarlyStopper stopper(p.epochs > 0 ? cap : kPatience, cap);

  std::unique_ptr<TrialModel> model = task.instantiate(config);
  require(model->train_size() > 0, ErrorCode::kEmptyInput, "run_trial: no training examples");
  std::vector<std::size_t> order(model->train_size());
  std::uint64_t step = 0;
  try {
    while (!stopper.stop()) {
      const int epoch = stopper.epochs() + 1;
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(mix_seed(config.seed, 0x0e, static_cast<std::uint64_t>(epoch)));
      rng.shuffle(std::span<std::size_t>(order));
      double total = 0.0;
      std::size_t batches = 0;
      for (std::size_t at = 0; at < order.size(); at += p.batch_size) {
        const auto batch = std::span<const std::size_t>(order).subspan(at, std::min(p.batch_size, order.size() - at));
        const double loss = model->train_step(batch, p.learning_rate, mix_seed(config.seed, 0xd0, step++));
        require(std::isfinite(loss), ErrorCode::kNonFinite,
                "non-finite training loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
        total += loss;
        ++batches;
      }
      const Evaluation dev = model->evaluate_dev();
      require(std::isfinite(dev.loss), ErrorCode::kNonFinite,
              "non-finite validation loss at epoch " + std::to_string(epoch));
      result.epochs.push_back({epoch, total / static_cast<double>(batches), dev.loss, dev.metric});
      if (stopper.update(dev.loss)) model->remember_best();
    }
    model->restore_best();
    result.stop_epoch = stopper.epochs();
    result.best_epoch = stopper.best_epoch();
    result.best_dev_loss = stopper.best_loss();
    result.dev_metric = result.epochs[static_cast<std::size_t>(result.best_epoch - 1)].dev_metric;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNonFinite) throw;
    result.status = TrialStatus::kFailed;
    result.failure = e.what();
    result.stop_epoch = static_cast<int>(result.epochs.size()) + 1;
    result.best_epoch = 0;
    result.best_dev_loss = NAN;
    result.dev_metric = 0.0;
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (model_out) *model_out = std::move(model);
  return result;
}

GridReport grid_search(const FineTuneTask& task, const GridSpace& space, std::span<const std::uint64_t> seeds,
                       const SearchOptions& options) {
  require(!seeds.empty(), ErrorCode::kInvalidArgument, "grid_search: at least one seed is required");
  GridReport report;
  report.task_id = task.id();
  report.metric = task.metric_name();
  report.seeds.assign(seeds.begin(), seeds.end());
  report.points = enumerate_grid(space);
  const std::size_t n_seeds = seeds.size();
  report.trials.resize(report.points.size() * n_seeds);

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(report.trials.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < report.trials.size(); i = next++) {
      TrialConfig config{report.points[i / n_seeds], seeds[i % n_seeds], task.id(), task.checkpoint_id()};
      try {
        report.trials[i] = run_trial(task, config);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, report.trials.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (std::size_t p = 0; p < report.points.size(); ++p) {
    double sum = 0.0;
    bool any_ok = false;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const TrialResult& r = report.trials[p * n_seeds + s];
      if (r.status == TrialStatus::kOk) any_ok = true, sum += r.dev_metric;
    }
    if (!any_ok) continue;
    const double mean = sum / static_cast<double>(n_seeds);
    bool better = !report.best || mean > report.best_mean_metric;
    if (report.best && mean == report.best_mean_metric) {
      const TrialPoint &a = report.points[p], &b = report.points[*report.best];
      better = a.batch_size < b.batch_size || (a.batch_size == b.batch_size && a.learning_rate < b.learning_rate);
    }
    if (better) report.best = p, report.best_mean_metric = mean;
  }
  report.all_failed = !report.best.has_value();
  return report;
}

std::string GridReport::trials_csv() const {
  std::ostringstream out;
  out << "trial,seed,lr,batch,dropout,epochs,stop_epoch,best_dev_loss,dev_metric,status\n";
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const TrialResult& r = trials[i];
    const TrialPoint& p = r.config.point;
    out << i / seeds.size() << ',' << r.config.seed << ',' << format_double(p.learning_rate) << ',' << p.batch_size
        << ',' << format_double(p.dropout) << ',' << (p.epochs > 0 ? std::to_string(p.epochs) : "early") << ','
        << r.stop_epoch << ',' << (r.status == TrialStatus::kOk ? format_double(r.best_dev_loss) : "") << ','
        << format_double(r.dev_metric) << ',' << to_string(r.status) << '\n';
  }
  return out.str();
}

std::string GridReport::best_config_text() const {
  std::ostringstream out;
  out << "task=" << task_id << "\nmetric=" << metric << "\nseeds=";
  for (std::size_t i = 0; i < seeds.size(); ++i) out << (i ? "," : "") << seeds[i];
  out << "\ntrials=" << trials.size() << '\n';
  if (!best) {
    out << "status=all-failed\n";
    return out.str();
  }
  const TrialPoint& p = points[*best];
  out << "status=ok\nlr=" << format_double(p.learning_rate) << "\nbatch=" << p.batch_size
      << "\ndropout=" << format_double(p.dropout) << "\nepochs=" << (p.epochs > 0 ? std::to_string(p.epochs) : "early")
      << "\nmean_dev_metric=" << format_double(best_mean_metric) << '\n';
  return out.str();
}

void write_grid_report(const GridReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "trials.csv", report.trials_csv());
  write_file_atomic(dir / "best_config.txt", report.best_config_text());
}

std::string select_variant(const std::map<std::string, VariantScore>& variants) {
  require(!variants.empty(), ErrorCode::kInvalidArgument, "select_variant: no variants");
  auto best = variants.begin();
  for (auto it = std::next(variants.begin()); it != variants.end(); ++it) {
    const VariantScore &a = it->second, &b = best->second;
    if (a.dev_metric > b.dev_metric || (a.dev_metric == b.dev_metric && a.pretrain_steps < b.pretrain_steps))
      best = it;
  }
  return best->first;
}

RunAggregate aggregate_runs(std::span<const double> values) {
  require(!values.empty(), ErrorCode::kInvalidArgument, "aggregate_runs: at least one run is required");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  RunAggregate a;
  a.runs = v.size();
  a.min = v.front();
  a.max = v.back();
  a.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  a.mean = std::clamp(a.mean, a.min, a.max);
  return a;
}

}  // namespace slab
