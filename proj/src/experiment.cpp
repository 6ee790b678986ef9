#include "hemf/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "hemf/elbo.hpp"
#include "hemf/empirical.hpp"

namespace hemf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

MetricsLog::MetricsLog(std::ostream* out, bool timing)
    : out_(out), timing_(timing), start_(std::chrono::steady_clock::now()) {
  if (out_) *out_ << header() << '\n';
}

double MetricsLog::elapsed_ms() const {
  if (!timing_) return 0.0;
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
}

void MetricsLog::add(MetricsRow row) {
  row.wall_ms = elapsed_ms();
  if (out_) *out_ << format(row) << '\n' << std::flush;
  rows_.push_back(std::move(row));
}

std::string MetricsLog::header() { return "phase,step,elbo,train_rmse,test_rmse,D,K,wall_ms"; }

std::string MetricsLog::format(const MetricsRow& r) {
  return r.phase + ',' + std::to_string(r.step) + ',' + number(r.elbo) + ',' + number(r.train_rmse) +
         ',' + number(r.test_rmse) + ',' + std::to_string(r.D) + ',' + std::to_string(r.K) + ',' +
         number(r.wall_ms);
}

double model_rmse(const ModelState& state, const SparseRatings& ratings, const EvalContext& ctx) {
  const auto p = predict_all(state, ratings, ctx.offset, ctx.clamp);
  return rmse(p, ratings);
}

double sgd_rmse(const SgdModel& model, const SparseRatings& ratings, const EvalContext& ctx) {
  std::vector<double> p;
  p.reserve(ratings.size());
  for (const auto& e : ratings.entries()) {
    double v = ctx.offset + model.predict(e.user, e.item);
    if (ctx.clamp) v = std::clamp(v, ctx.clamp->lo, ctx.clamp->hi);
    p.push_back(v);
  }
  return rmse(p, ratings);
}

FitResult run_fit(const Hyperparameters& hyper, FitConfig config, const EvalContext& ctx,
                  MetricsLog* log) {
  if (!ctx.train) throw DataError("run_fit: no training set");
  const SparseRatings train = shifted(*ctx.train, -ctx.offset);
  const std::string phase = config.empirical ? "bvb+evb" : "bvb";
  auto user_hook = config.on_sweep;
  config.on_sweep = [&](std::size_t sweep, const ModelState& s) {
    if (user_hook) user_hook(sweep, s);
    if (!log) return;
    MetricsRow row;
    row.phase = phase;
    row.step = sweep + 1;
    row.elbo = s.elbo_trace.empty() ? kNaN : s.elbo_trace.back();
    row.train_rmse = model_rmse(s, *ctx.train, ctx);
    row.test_rmse = ctx.test ? model_rmse(s, *ctx.test, ctx) : kNaN;
    row.D = s.users.n_components();
    row.K = s.items.n_components();
    log->add(std::move(row));
  };
  return fit_batch(train, hyper, config);
}

namespace {

std::vector<RatingChunk> epoch_chunks(const SparseRatings& train, const StreamOptions& opts,
                                      std::size_t epoch) {
  auto chunks = chunk_stream(train, opts.chunk_size, opts.seed + epoch);
  if (epoch > 0 && opts.method == StreamOptions::Method::ovb) {
    for (auto& c : chunks) {
      for (auto& e : c.entries) {
        e.kind = EntryKind::revision;
        e.previous = e.value;
      }
    }
  }
  return chunks;
}

}  // namespace

StreamResult run_stream(const Hyperparameters& hyper, const StreamOptions& opts,
                        const EvalContext& ctx, MetricsLog* log, std::optional<OnlineState> resume,
                        const StreamHooks& hooks) {
  if (!ctx.train) throw DataError("run_stream: no training set");
  if (opts.epochs == 0 || opts.eval_every == 0) throw DomainError("epochs and eval_every must be positive");
  hyper.validate();
  const SparseRatings train = shifted(*ctx.train, -ctx.offset);
  const std::size_t U = train.n_users(), M = train.n_items();

  StreamResult result;
  const bool ovb = opts.method == StreamOptions::Method::ovb;
  std::size_t skip = 0;
  if (ovb) {
    if (resume) {
      skip = static_cast<std::size_t>(resume->chunks);
      result.ovb = std::move(*resume);
    } else {
      // Entities exist from the start so predictions are defined for every pair;
      // none contributes to the statistics before its first rating.
      SparseRatings shape(U, M);
      result.ovb = start_online(init_state(shape, hyper, opts.d_init, opts.k_init, opts.seed),
                                opts.seed + 0x5eed);
    }
  } else {
    if (resume) throw DomainError("run_stream: resume is only supported for oVB");
    result.sgd = SgdModel::create(U, M, hyper.latent_dim, opts.seed);
    result.sgd->lr0 = opts.sgd_lr0;
    result.sgd->decay = opts.sgd_decay;
    result.sgd->reg = opts.sgd_reg;
  }

  std::vector<Rating> window;  // entries since the last eVB pass
  std::size_t absorbed = 0;    // fresh entries consumed so far
  std::size_t window_before = 0;
  std::size_t index = 0;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    const auto chunks = epoch_chunks(train, opts, epoch);
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      const auto& chunk = chunks[c];
      const bool final_chunk = epoch + 1 == opts.epochs && c + 1 == chunks.size();
      if (hooks.stop_after && index >= *hooks.stop_after) return result;
      ++index;
      for (const auto& e : chunk.entries) {
        window.push_back({e.user, e.item, e.value});
        if (e.kind == EntryKind::fresh) ++absorbed;
      }
      const bool evb_due = ovb && opts.evb_every > 0 && index % opts.evb_every == 0;
      if (index <= skip) {
        if (evb_due) {
          window.clear();
          window_before = absorbed;
        }
        continue;
      }
      MetricsRow row;
      if (ovb) {
        auto& s = *result.ovb;
        process_chunk(chunk, s, opts.online);
        if (evb_due) {
          EvbOptions evb{opts.online.form, opts.online.exec, false,
                         EvbOptions::Online{window, window_before, absorbed}};
          run_evb_pass(s.model, s.absorbed, evb);
          window.clear();
          window_before = absorbed;
        }
        if (hooks.after_ovb_chunk) hooks.after_ovb_chunk(index, s);
        row.phase = opts.evb_every > 0 ? "ovb+evb" : "ovb";
        row.D = s.model.users.n_components();
        row.K = s.model.items.n_components();
        row.elbo = opts.record_elbo ? compute_elbo(s.model, s.absorbed, opts.online.exec) : kNaN;
      } else {
        sgd_process_chunk(chunk, *result.sgd);
        row.phase = "sgd";
        row.elbo = kNaN;
      }
      result.chunks = index;
      if (index % opts.eval_every != 0 && !final_chunk) continue;
      if (ovb) {
        row.train_rmse = model_rmse(result.ovb->model, *ctx.train, ctx);
        row.test_rmse = ctx.test ? model_rmse(result.ovb->model, *ctx.test, ctx) : kNaN;
      } else {
        row.train_rmse = sgd_rmse(*result.sgd, *ctx.train, ctx);
        row.test_rmse = ctx.test ? sgd_rmse(*result.sgd, *ctx.test, ctx) : kNaN;
      }
      row.step = index;
      result.test_rmse.push_back(row.test_rmse);
      if (log) log->add(std::move(row));
    }
  }
  return result;
}

}  // namespace hemf
