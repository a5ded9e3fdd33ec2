#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace slab {

inline constexpr int kPatience = 3;
inline constexpr int kSafetyCap = 20;

// Hyper-parameter value sets. With early_stopping the epoch set must be empty;
// otherwise it lists fixed epoch counts.
struct GridSpace {
  std::vector<double> learning_rates;
  std::vector<std::size_t> batch_sizes;
  std::vector<double> dropouts;
  std::vector<int> epochs;
  bool early_stopping = false;

  // lr {2,3,4,5}e-5 x batch {16,32} x dropout {0.1} x epochs {3,4}
  static GridSpace default_space();
  // lr {1,2,3,4,5}e-5 x batch {4,8,16,32} x dropout {0.1,0.2}, early stopping
  static GridSpace expanded_space();
  void validate() const;
};

struct TrialPoint {
  double learning_rate = 0.0;
  std::size_t batch_size = 0;
  double dropout = 0.0;
  int epochs = 0;  // 0 = early stopping

  friend bool operator==(const TrialPoint&, const TrialPoint&) = default;
};

// Cartesian product in lexicographic (lr, batch, dropout, epochs) order, each
// set taken in ascending order.
std::vector<TrialPoint> enumerate_grid(const GridSpace& space);

struct TrialConfig {
  TrialPoint point;
  std::uint64_t seed = 0;
  std::string task_id;
  std::string checkpoint_id;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_metric = 0.0;
};

enum class TrialStatus { kOk, kFailed };
std::string to_string(TrialStatus status);

struct TrialResult {
  TrialConfig config;
  std::vector<EpochRecord> epochs;
  int stop_epoch = 0;
  int best_epoch = 0;
  double best_dev_loss = 0.0;
  double dev_metric = 0.0;  // at best_epoch
  TrialStatus status = TrialStatus::kOk;
  std::string failure;
  double wall_seconds = 0.0;  // never written to reports
};

// Tracks validation losses; stop() turns true once `patience` consecutive
// epochs failed to improve on the best loss, or at the cap.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience = kPatience, int cap = kSafetyCap) : patience_(patience), cap_(cap) {}
  // Returns true when the new epoch is the best so far (strict improvement).
  bool update(double loss);
  bool stop() const { return epochs_ >= cap_ || since_best_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }
  int epochs() const { return epochs_; }

 private:
  int patience_;
  int cap_;
  int epochs_ = 0;
  int best_epoch_ = 0;
  int since_best_ = 0;
  double best_ = 0.0;
};

struct Evaluation {
  double loss = 0.0;
  double metric = 0.0;
};

// One fine-tuning run's mutable state; owned by a single trial.
class TrialModel {
 public:
  virtual ~TrialModel() = default;
  virtual std::size_t train_size() const = 0;
  // One optimizer step on the given training examples; returns the batch loss.
  virtual double train_step(std::span<const std::size_t> batch, double learning_rate, std::uint64_t dropout_seed) = 0;
  virtual Evaluation evaluate_dev() = 0;
  virtual void remember_best() = 0;
  virtual void restore_best() = 0;
};

// A fine-tuning problem: data, head and metric. instantiate() must be safe to
// call concurrently.
class FineTuneTask {
 public:
  virtual ~FineTuneTask() = default;
  virtual std::string id() const = 0;
  virtual std::string metric_name() const = 0;
  virtual std::string checkpoint_id() const { return {}; }
  virtual std::unique_ptr<TrialModel> instantiate(const TrialConfig& config) const = 0;
};

// Epochs run over a per-(seed, epoch) shuffle of the training set; a
// non-finite loss or any numeric failure marks the trial failed. The model is
// left at its best-dev-loss epoch and handed back through model_out.
TrialResult run_trial(const FineTuneTask& task, const TrialConfig& config,
                      std::unique_ptr<TrialModel>* model_out = nullptr);

struct GridReport {
  std::string task_id;
  std::string metric;
  std::vector<std::uint64_t> seeds;
  std::vector<TrialPoint> points;
  std::vector<TrialResult> trials;  // point-major, seed-minor
  std::optional<std::size_t> best;  // index into points
  double best_mean_metric = 0.0;
  bool all_failed = false;

  // trial,seed,lr,batch,dropout,epochs,stop_epoch,best_dev_loss,dev_metric,status
  std::string trials_csv() const;
  // key=value lines describing the winner (or the failure).
  std::string best_config_text() const;
};

struct SearchOptions {
  std::size_t workers = 1;
};

// best = argmax over points of the mean best-epoch dev metric across seeds
// (failed runs count 0; points whose runs all failed are not eligible); ties go
// to the smaller batch, then the lower learning rate, then enumeration order.
GridReport grid_search(const FineTuneTask& task, const GridSpace& space, std::span<const std::uint64_t> seeds,
                       const SearchOptions& options = {});

void write_grid_report(const GridReport& report, const std::filesystem::path& dir);

struct VariantScore {
  double dev_metric = 0.0;
  std::int64_t pretrain_steps = 0;
};

// argmax dev metric; ties go to fewer pre-training steps, then the smaller id.
std::string select_variant(const std::map<std::string, VariantScore>& variants);

struct RunAggregate {
  std::size_t runs = 0;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

// Order-independent: values are sorted before summation.
RunAggregate aggregate_runs(std::span<const double> values);

}  // namespace slab
