// Command-line front end: fit, stream, split, predict, eval, synth.

#include <omp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "hemf/checkpoint.hpp"
#include "hemf/data.hpp"
#include "hemf/empirical.hpp"
#include "hemf/experiment.hpp"
#include "hemf/sampler.hpp"

namespace {

using namespace hemf;
using json = nlohmann::json;

constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct Common {
  std::size_t latent_dim = 5;
  std::uint64_t seed = 1;
  std::string mode = "recomputed";
  int threads = 0;
  double sigma2 = 1.0;
  double lambda0 = 1.0;
  double alpha = 1.0;
  double beta = 1.0;
  double iota0 = 0.0;  // 0 means L + 2
  double w0_scale = 1.0;
  double eps_spawn = 1e-3;
  double merge_tau = 0.1;
  double lr_alpha = 1e-3;
  double lr_iota = 1e-3;
  std::string format = "csv";
  std::string metrics;
  std::string summary;
  bool no_timing = false;
  bool center = false;
  std::vector<double> clamp;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--latent-dim", c.latent_dim, "latent dimension L")->check(CLI::PositiveNumber);
  app->add_option("--seed", c.seed, "seed for initialization, splits and chunk order");
  app->add_option("--mode", c.mode, "community/global update form")
      ->check(CLI::IsMember({"printed", "recomputed", "conjugate"}));
  app->add_option("--threads", c.threads, "OpenMP threads (0 keeps the runtime default)");
  app->add_option("--sigma2", c.sigma2, "initial rating noise variance");
  app->add_option("--lambda0", c.lambda0);
  app->add_option("--alpha", c.alpha);
  app->add_option("--beta", c.beta);
  app->add_option("--iota0", c.iota0, "inverse-Wishart degrees of freedom (default L + 2)");
  app->add_option("--w0-scale", c.w0_scale, "W0 = scale * I");
  app->add_option("--eps-spawn", c.eps_spawn);
  app->add_option("--merge-tau", c.merge_tau);
  app->add_option("--lr-alpha", c.lr_alpha);
  app->add_option("--lr-iota", c.lr_iota);
  app->add_option("--format", c.format, "rating file format")
      ->check(CLI::IsMember({"csv", "double_colon", "per_item_files"}));
  app->add_option("--metrics", c.metrics, "metrics CSV output");
  app->add_option("--summary", c.summary, "JSON run summary output");
  app->add_flag("--no-timing", c.no_timing, "write wall_ms as 0");
  app->add_flag("--center", c.center, "model ratings minus the training mean");
  app->add_option("--clamp", c.clamp, "clamp predictions to [lo hi]")->expected(2);
}

Hyperparameters hyper_of(const Common& c) {
  auto h = Hyperparameters::defaults(c.latent_dim);
  h.sigma2 = c.sigma2;
  h.lambda0 = c.lambda0;
  h.alpha = c.alpha;
  h.beta = c.beta;
  if (c.iota0 > 0.0) h.iota0 = c.iota0;
  h.W0 = c.w0_scale * Mat::Identity(static_cast<Eigen::Index>(c.latent_dim),
                                    static_cast<Eigen::Index>(c.latent_dim));
  h.eps_spawn = c.eps_spawn;
  h.merge_tau = c.merge_tau;
  h.lr_alpha = c.lr_alpha;
  h.lr_iota = c.lr_iota;
  h.validate();
  return h;
}

CommunityForm form_of(const Common& c) {
  return c.mode == "conjugate" ? CommunityForm::conjugate : CommunityForm::printed;
}

GlobalsMode globals_of(const Common& c) {
  return c.mode == "printed" ? GlobalsMode::printed : GlobalsMode::recomputed;
}

std::optional<RatingRange> clamp_of(const Common& c) {
  if (c.clamp.size() != 2) return std::nullopt;
  return RatingRange{c.clamp[0], c.clamp[1]};
}

struct Loaded {
  Dataset train;
  std::optional<Dataset> test;
};

Loaded load_sets(const Common& c, const std::string& train_path, const std::string& test_path) {
  Loaded l;
  const auto fmt = parse_format(c.format);
  l.train = parse_ratings(train_path, fmt);
  if (!test_path.empty()) l.test = parse_ratings(test_path, fmt, l.train.users, l.train.items);
  return l;
}

std::unique_ptr<std::ofstream> open_out(const std::string& path) {
  if (path.empty()) return nullptr;
  auto f = std::make_unique<std::ofstream>(path);
  if (!*f) throw DataError("cannot write " + path);
  return f;
}

json hyper_json(const Hyperparameters& h) {
  return {{"latent_dim", h.latent_dim}, {"sigma2", h.sigma2}, {"lambda0", h.lambda0},
          {"alpha", h.alpha},           {"beta", h.beta},     {"iota0", h.iota0},
          {"W0_trace", h.W0.trace()}};
}

json nan_safe(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_summary(const std::string& path, const json& j) {
  if (path.empty()) return;
  auto f = open_out(path);
  *f << j.dump(2) << '\n';
}

int cmd_fit(const Common& c, const std::string& train_path, const std::string& test_path,
            const FitConfig& base, const std::string& ckpt_path) {
  auto sets = load_sets(c, train_path, test_path);
  const auto hyper = hyper_of(c);
  FitConfig config = base;
  config.seed = c.seed;
  config.form = form_of(c);
  EvalContext ctx;
  ctx.train = &sets.train.ratings;
  ctx.test = sets.test ? &sets.test->ratings : nullptr;
  ctx.offset = c.center ? mean_rating(sets.train.ratings) : 0.0;
  ctx.clamp = clamp_of(c);
  auto metrics = open_out(c.metrics);
  MetricsLog log(metrics.get(), !c.no_timing);
  const auto result = run_fit(hyper, config, ctx, &log);
  const auto& last = log.rows().back();
  std::cout << "sweeps " << result.sweeps << (result.converged ? " (converged)" : "")
            << "  train_rmse " << last.train_rmse;
  if (ctx.test) std::cout << "  test_rmse " << last.test_rmse;
  std::cout << '\n';
  if (!ckpt_path.empty()) {
    Checkpoint ck;
    ck.model = result.state;
    ck.cursor = result.sweeps;
    ck.rng = CounterRng(c.seed);
    ck.ids = Checkpoint::Ids{sets.train.users, sets.train.items};
    save_checkpoint(ckpt_path, ck);
  }
  write_summary(c.summary, {{"command", "fit"},
                            {"sweeps", result.sweeps},
                            {"converged", result.converged},
                            {"offset", ctx.offset},
                            {"train_rmse", nan_safe(last.train_rmse)},
                            {"test_rmse", nan_safe(last.test_rmse)},
                            {"elbo", nan_safe(last.elbo)},
                            {"D", last.D},
                            {"K", last.K},
                            {"seed", c.seed},
                            {"hyper", hyper_json(result.state.hyper)}});
  return 0;
}

int cmd_stream(const Common& c, const std::string& train_path, const std::string& test_path,
               StreamOptions opts, const std::string& ckpt_path, const std::string& resume_path) {
  auto sets = load_sets(c, train_path, test_path);
  const auto hyper = hyper_of(c);
  opts.seed = c.seed;
  opts.online.form = form_of(c);
  opts.online.globals = globals_of(c);
  EvalContext ctx;
  ctx.train = &sets.train.ratings;
  ctx.test = sets.test ? &sets.test->ratings : nullptr;
  ctx.offset = c.center ? mean_rating(sets.train.ratings) : 0.0;
  ctx.clamp = clamp_of(c);
  std::optional<OnlineState> resume;
  if (!resume_path.empty()) resume = online_state_of(load_checkpoint(resume_path));
  auto metrics = open_out(c.metrics);
  MetricsLog log(metrics.get(), !c.no_timing);
  const auto result = run_stream(hyper, opts, ctx, &log, std::move(resume));
  if (log.rows().empty()) throw DataError("stream: nothing was evaluated");
  const auto& last = log.rows().back();
  std::cout << "chunks " << result.chunks << "  train_rmse " << last.train_rmse;
  if (ctx.test) std::cout << "  test_rmse " << last.test_rmse;
  if (result.ovb) std::cout << "  D " << last.D << "  K " << last.K;
  std::cout << '\n';
  if (!ckpt_path.empty()) {
    if (!result.ovb) throw DataError("stream: checkpoints are only written for oVB runs");
    auto ck = checkpoint_of(*result.ovb);
    ck.ids = Checkpoint::Ids{sets.train.users, sets.train.items};
    save_checkpoint(ckpt_path, ck);
  }
  write_summary(c.summary, {{"command", "stream"},
                            {"method", opts.method == StreamOptions::Method::ovb ? "ovb" : "sgd"},
                            {"chunks", result.chunks},
                            {"chunk_size", opts.chunk_size},
                            {"offset", ctx.offset},
                            {"train_rmse", nan_safe(last.train_rmse)},
                            {"test_rmse", nan_safe(last.test_rmse)},
                            {"D", last.D},
                            {"K", last.K},
                            {"seed", c.seed},
                            {"hyper", result.ovb ? hyper_json(result.ovb->model.hyper) : hyper_json(hyper)}});
  return 0;
}

int cmd_split(const Common& c, const std::string& input, const std::string& split_mode,
              double fraction, std::size_t folds, std::size_t fold, const std::string& train_out,
              const std::string& test_out) {
  const auto data = parse_ratings(input, parse_format(c.format));
  SplitSpec spec;
  spec.seed = c.seed;
  spec.fraction = fraction;
  spec.folds = folds;
  spec.fold = fold;
  if (split_mode == "holdout") {
    spec.mode = SplitSpec::Mode::holdout;
  } else if (split_mode == "weak") {
    spec.mode = SplitSpec::Mode::weak_generalization;
  } else {
    spec.mode = SplitSpec::Mode::kfold;
  }
  const auto split = split_dataset(data.ratings, spec);
  auto tr = open_out(train_out);
  auto te = open_out(test_out);
  write_ratings_csv(*tr, split.train, &data.users, &data.items);
  write_ratings_csv(*te, split.test, &data.users, &data.items);
  std::cout << "train " << split.train.size() << "  test " << split.test.size();
  if (split.ineligible_users > 0) std::cout << "  train-only users " << split.ineligible_users;
  std::cout << '\n';
  return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& pairs_path, double offset,
                const Common& c) {
  const auto ck = load_checkpoint(ckpt_path);
  if (!ck.ids) throw DataError("checkpoint has no id maps");
  std::ifstream in(pairs_path);
  if (!in) throw DataError("cannot open " + pairs_path);
  const auto clamp = clamp_of(c);
  std::string line;
  std::size_t line_no = 0;
  std::cout.precision(10);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError(pairs_path + ":" + std::to_string(line_no) + ": expected user,item");
    const std::string u = line.substr(0, comma);
    std::string i = line.substr(comma + 1);
    if (const auto next = i.find(','); next != std::string::npos) i = i.substr(0, next);
    double p = offset;
    const auto ui = ck.ids->users.find(u);
    const auto ii = ck.ids->items.find(i);
    if (ui && ii && *ui < ck.model.users.size() && *ii < ck.model.items.size()) {
      p += predict_entry(ck.model, *ui, *ii);
    }
    if (clamp) p = std::clamp(p, clamp->lo, clamp->hi);
    std::cout << u << ',' << i << ',' << p << '\n';
  }
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& test_path, double offset,
             const Common& c) {
  const auto ck = load_checkpoint(ckpt_path);
  if (!ck.ids) throw DataError("checkpoint has no id maps");
  const auto test = parse_ratings(test_path, parse_format(c.format), ck.ids->users, ck.ids->items);
  const auto p = predict_all(ck.model, test.ratings, offset, clamp_of(c));
  const double r = rmse(p, test.ratings);
  std::cout.precision(10);
  std::cout << "rmse " << r << '\n';
  write_summary(c.summary, {{"command", "eval"}, {"rmse", r}, {"entries", test.ratings.size()}});
  return 0;
}

int cmd_synth(const Common& c, std::size_t users, std::size_t items, std::size_t d_true,
              std::size_t k_true, double density, const std::string& out_path,
              const std::string& labels_path) {
  const auto hyper = hyper_of(c);
  const auto data = sample_from_model(hyper, d_true, k_true, users, items, density, c.seed);
  auto out = open_out(out_path);
  write_ratings_csv(*out, data.ratings);
  if (auto labels = open_out(labels_path)) {
    *labels << "side,index,label\n";
    for (std::size_t i = 0; i < data.user_labels.size(); ++i) *labels << "user," << i << ',' << data.user_labels[i] << '\n';
    for (std::size_t j = 0; j < data.item_labels.size(); ++j) *labels << "item," << j << ',' << data.item_labels[j] << '\n';
  }
  std::cout << "ratings " << data.ratings.size() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coupled Dirichlet-process matrix factorization"};
  app.set_config("--config", "", "key=value configuration file");
  app.require_subcommand(1);

  Common common;
  std::string train_path, test_path, ckpt_path, resume_path, pairs_path, input, out_path, labels_path;
  std::string train_out, test_out, split_mode = "holdout", method = "ovb";
  FitConfig fit;
  StreamOptions stream;
  double fraction = 0.9, density = 0.1, offset = 0.0;
  std::size_t folds = 5, fold = 0, users = 300, items = 200, d_true = 3, k_true = 2;
  bool no_spawn = false, no_merge = false;

  auto* f = app.add_subcommand("fit", "batch inference, optionally with empirical Bayes");
  add_common(f, common);
  f->add_option("--train", train_path)->required();
  f->add_option("--test", test_path);
  f->add_option("--d-init", fit.d_init)->check(CLI::PositiveNumber);
  f->add_option("--k-init", fit.k_init)->check(CLI::PositiveNumber);
  f->add_option("--max-sweeps", fit.max_sweeps)->check(CLI::PositiveNumber);
  f->add_option("--tolerance", fit.tolerance);
  f->add_flag("--evb", fit.empirical, "one empirical-Bayes pass after every sweep");
  f->add_option("--checkpoint", ckpt_path, "write the final state here");

  auto* s = app.add_subcommand("stream", "online inference or the SGD baseline over seeded chunks");
  add_common(s, common);
  s->add_option("--train", train_path)->required();
  s->add_option("--test", test_path);
  s->add_option("--method", method)->check(CLI::IsMember({"ovb", "sgd"}));
  s->add_option("--chunk-size", stream.chunk_size)->check(CLI::PositiveNumber);
  s->add_option("--d-init", stream.d_init)->check(CLI::PositiveNumber);
  s->add_option("--k-init", stream.k_init)->check(CLI::PositiveNumber);
  s->add_option("--evb-every", stream.evb_every, "chunks between eVB passes (0 = off)");
  s->add_option("--epochs", stream.epochs)->check(CLI::PositiveNumber);
  s->add_option("--eval-every", stream.eval_every)->check(CLI::PositiveNumber);
  s->add_option("--propagation", stream.online.propagation_sweeps);
  s->add_flag("--no-spawn", no_spawn);
  s->add_flag("--no-merge", no_merge);
  s->add_flag("--elbo", stream.record_elbo, "record the ELBO after every evaluated chunk");
  s->add_option("--sgd-lr", stream.sgd_lr0);
  s->add_option("--sgd-decay", stream.sgd_decay);
  s->add_option("--sgd-reg", stream.sgd_reg);
  s->add_option("--checkpoint", ckpt_path, "write the final oVB state here");
  s->add_option("--resume", resume_path, "continue from an oVB checkpoint");

  auto* sp = app.add_subcommand("split", "train/test split");
  add_common(sp, common);
  sp->add_option("--input", input)->required();
  sp->add_option("--split", split_mode)->check(CLI::IsMember({"holdout", "weak", "kfold"}));
  sp->add_option("--fraction", fraction);
  sp->add_option("--folds", folds);
  sp->add_option("--fold", fold);
  sp->add_option("--train-out", train_out)->required();
  sp->add_option("--test-out", test_out)->required();

  auto* p = app.add_subcommand("predict", "predict user,item pairs from a checkpoint");
  add_common(p, common);
  p->add_option("--checkpoint", ckpt_path)->required();
  p->add_option("--pairs", pairs_path)->required();
  p->add_option("--offset", offset, "added to every prediction (the training mean with --center)");

  auto* e = app.add_subcommand("eval", "RMSE of a checkpoint on a rating file");
  add_common(e, common);
  e->add_option("--checkpoint", ckpt_path)->required();
  e->add_option("--test", test_path)->required();
  e->add_option("--offset", offset);

  auto* y = app.add_subcommand("synth", "sample ratings from the generative model");
  add_common(y, common);
  y->add_option("--users", users);
  y->add_option("--items", items);
  y->add_option("--d-true", d_true);
  y->add_option("--k-true", k_true);
  y->add_option("--density", density);
  y->add_option("--out", out_path)->required();
  y->add_option("--labels", labels_path);

  CLI11_PARSE(app, argc, argv);

  try {
    if (common.threads > 0) omp_set_num_threads(common.threads);
    if (f->parsed()) return cmd_fit(common, train_path, test_path, fit, ckpt_path);
    if (s->parsed()) {
      stream.method = method == "sgd" ? StreamOptions::Method::sgd : StreamOptions::Method::ovb;
      stream.online.spawn = !no_spawn;
      stream.online.merge = !no_merge;
      return cmd_stream(common, train_path, test_path, stream, ckpt_path, resume_path);
    }
    if (sp->parsed()) return cmd_split(common, input, split_mode, fraction, folds, fold, train_out, test_out);
    if (p->parsed()) return cmd_predict(ckpt_path, pairs_path, offset, common);
    if (e->parsed()) return cmd_eval(ckpt_path, test_path, offset, common);
    if (y->parsed()) return cmd_synth(common, users, items, d_true, k_true, density, out_path, labels_path);
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << '\n';
    return kExitData;
  } catch (const DomainError& err) {
    std::cerr << "invalid configuration: " << err.what() << '\n';
    return kExitData;
  } catch (const DimensionMismatch& err) {
    std::cerr << "invalid configuration: " << err.what() << '\n';
    return kExitData;
  } catch (const NumericalError& err) {
    std::cerr << "numerical failure: " << err.what() << '\n';
    return kExitNumerical;
  } catch (const NotPositiveDefinite& err) {
    std::cerr << "numerical failure: " << err.what() << '\n';
    return kExitNumerical;
  }
  return 0;
}
