#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hemf/baselines.hpp"
#include "hemf/batch.hpp"
#include "hemf/data.hpp"
#include "hemf/online.hpp"

namespace hemf {

struct MetricsRow {
  std::string phase;
  std::size_t step = 0;
  double elbo = 0.0;  // NaN when not computed
  double train_rmse = 0.0;
  double test_rmse = 0.0;  // NaN without a test set
  std::size_t D = 0;
  std::size_t K = 0;
  double wall_ms = 0.0;
};

/// One CSV row per sweep or chunk: phase,step,elbo,train_rmse,test_rmse,D,K,wall_ms.
/// With timing off wall_ms is written as 0 so identical runs give identical files.
class MetricsLog {
 public:
  explicit MetricsLog(std::ostream* out = nullptr, bool timing = true);

  void add(MetricsRow row);
  const std::vector<MetricsRow>& rows() const { return rows_; }
  double elapsed_ms() const;

  static std::string header();
  static std::string format(const MetricsRow& row);

 private:
  std::ostream* out_;
  bool timing_;
  std::chrono::steady_clock::time_point start_;
  std::vector<MetricsRow> rows_;
};

/// Ratings are modelled as value - offset; predictions add the offset back.
struct EvalContext {
  const SparseRatings* train = nullptr;  // original scale
  const SparseRatings* test = nullptr;   // optional
  double offset = 0.0;
  std::optional<RatingRange> clamp;
};

double model_rmse(const ModelState& state, const SparseRatings& ratings, const EvalContext& ctx);
double sgd_rmse(const SgdModel& model, const SparseRatings& ratings, const EvalContext& ctx);

/// fit_batch on the offset-shifted training set, one metrics row per sweep.
FitResult run_fit(const Hyperparameters& hyper, FitConfig config, const EvalContext& ctx,
                  MetricsLog* log = nullptr);

struct StreamOptions {
  enum class Method { ovb, sgd };
  Method method = Method::ovb;
  std::size_t chunk_size = 30;
  std::uint64_t seed = 1;  // chunk order and initial factors
  std::size_t d_init = 1;
  std::size_t k_init = 1;
  OnlineConfig online;
  std::size_t evb_every = 0;  // 0 disables eVB; otherwise one pass per this many chunks
  std::size_t epochs = 1;     // later oVB epochs resend absorbed pairs as unchanged revisions
  std::size_t eval_every = 1;
  bool record_elbo = false;
  double sgd_lr0 = 0.01;
  double sgd_decay = 1e-4;
  double sgd_reg = 0.02;
};

struct StreamHooks {
  /// Stop once this many chunks (counted over all epochs) have been consumed.
  std::optional<std::size_t> stop_after;
  std::function<void(std::size_t chunk, const OnlineState&)> after_ovb_chunk;
};

struct StreamResult {
  std::optional<OnlineState> ovb;
  std::optional<SgdModel> sgd;
  std::vector<double> test_rmse;  // one entry per evaluated chunk
  std::size_t chunks = 0;
};

/// Streams the shifted training set in seeded chunks. `resume` continues an oVB run
/// from a checkpointed state: its chunk counter says how many chunks to skip.
StreamResult run_stream(const Hyperparameters& hyper, const StreamOptions& opts,
                        const EvalContext& ctx, MetricsLog* log = nullptr,
                        std::optional<OnlineState> resume = std::nullopt,
                        const StreamHooks& hooks = {});

}  // namespace hemf
