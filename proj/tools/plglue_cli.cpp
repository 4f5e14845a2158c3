// Command-line front end: match, synth, eval, train-tiny, gradcheck, bench.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "plglue/evaluation.hpp"
#include "plglue/io.hpp"
#include "plglue/matcher.hpp"
#include "plglue/supervision.hpp"

namespace fs = std::filesystem;
using plg::io::Json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string pair_stem(std::size_t k) {
  std::ostringstream ss;
  ss << "pair_" << std::setw(3) << std::setfill('0') << k;
  return ss.str();
}

void emit(const Json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
  } else {
    plg::io::write_json(path, j);
  }
}

std::string resolve_weights(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (auto env = plg::io::default_weights_path()) return *env;
  throw UsageError("no weights given: pass --weights or set PLG_WEIGHTS");
}

// ---- match ---------------------------------------------------------------

struct MatchArgs {
  std::string features_a, features_b, weights, out;
  double tau = plg::kDefaultMatchThreshold;
  double alpha = 0.95;
  double merge_radius = plg::kDefaultMergeRadius;
  bool no_early_exit = false;
};

int run_match(const MatchArgs& args) {
  const auto params = plg::io::load_weights(resolve_weights(args.weights));
  const auto a = plg::io::load_features(args.features_a);
  const auto b = plg::io::load_features(args.features_b);
  plg::MatchOptions opt;
  opt.tau = args.tau;
  opt.merge_radius = args.merge_radius;
  opt.policy.alpha = args.alpha;
  opt.policy.enabled = !args.no_early_exit;
  const auto out = plg::match_features(params, a, b, opt);
  emit(plg::io::matches_to_json(out.matches, &a, &b, &out.timings), args.out);
  return kOk;
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
  std::string config, out_dir;
  std::size_t pairs = 1;
};

int run_synth(const SynthArgs& args) {
  auto cfg = args.config.empty() ? plg::SynthConfig{}
                                 : plg::io::synth_config_from_json(plg::io::read_json(args.config));
  fs::create_directories(args.out_dir);
  const auto base_seed = cfg.seed;
  for (std::size_t k = 0; k < args.pairs; ++k) {
    cfg.seed = base_seed + k;
    const auto pair = plg::synth_pair(cfg);
    const fs::path stem = fs::path(args.out_dir) / pair_stem(k);
    plg::io::save_features(stem.string() + "_a.json", pair.a);
    plg::io::save_features(stem.string() + "_b.json", pair.b);
    plg::io::write_json(stem.string() + "_h.json", plg::io::homography_to_json(pair.h));
    Json gt = plg::io::gt_to_json(pair.gt);
    gt["homography"] = plg::io::homography_to_json(pair.h);
    gt["image_size"] = Json::array({pair.a.width, pair.a.height});
    plg::io::write_json(stem.string() + "_gt.json", gt);
  }
  std::cout << "wrote " << args.pairs << " pair(s) to " << args.out_dir << "\n";
  return kOk;
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> matches, gts;
  std::string csv, summary;
  bool h_est = false;
  double ransac_threshold = 3.0;
  std::size_t ransac_iterations = 1000;
  std::uint64_t seed = 0;
};

Json ap_json(const plg::PRCurve& c) {
  return {{"ap", c.ap ? Json(*c.ap) : Json(nullptr)},
          {"positives", c.positives},
          {"predictions", c.precision.size()},
          {"true_positives", c.true_positives}};
}

int run_eval(const EvalArgs& args) {
  if (args.matches.size() != args.gts.size()) {
    throw UsageError("--matches and --gt need the same number of files");
  }
  std::ofstream csv;
  if (!args.csv.empty()) {
    csv.open(args.csv);
    if (!csv) throw plg::DataError("cannot write '" + args.csv + "'");
    csv << "pair,kind,rank,score,correct,precision,recall\n" << std::setprecision(17);
  }
  Json pairs = Json::array();
  std::vector<double> point_aps, line_aps, corner_errors;
  for (std::size_t k = 0; k < args.matches.size(); ++k) {
    const Json mj = plg::io::read_json(args.matches[k]);
    const Json gj = plg::io::read_json(args.gts[k]);
    const auto m = plg::io::matches_from_json(mj);
    const auto gt = plg::io::gt_from_json(gj);
    const auto pc = plg::precision_recall_ap(m.points, gt.points.positives);
    const auto lc = plg::precision_recall_ap(m.lines, gt.lines.positives);
    if (pc.ap) point_aps.push_back(*pc.ap);
    if (lc.ap) line_aps.push_back(*lc.ap);

    if (csv) {
      auto rows = [&](const char* kind, const auto& ranked, const plg::PRCurve& c,
                      const std::vector<plg::IndexPair>& pos) {
        const std::set<plg::IndexPair> gts(pos.begin(), pos.end());
        for (std::size_t r = 0; r < ranked.size(); ++r) {
          csv << k << ',' << kind << ',' << r + 1 << ',' << ranked[r].score << ','
              << (gts.count({ranked[r].i, ranked[r].j}) ? 1 : 0) << ',' << c.precision[r] << ','
              << c.recall[r] << "\n";
        }
      };
      rows("point", m.points, pc, gt.points.positives);
      rows("line", m.lines, lc, gt.lines.positives);
    }

    Json entry = {{"matches", args.matches[k]}, {"points", ap_json(pc)}, {"lines", ap_json(lc)}};
    if (args.h_est) {
      if (!gj.contains("homography") || !gj.contains("image_size")) {
        throw plg::DataError(args.gts[k] + ": --h-est needs 'homography' and 'image_size'");
      }
      const auto h_gt = plg::io::homography_from_json(gj.at("homography"));
      const double w = gj.at("image_size")[0].get<double>(), h = gj.at("image_size")[1].get<double>();
      std::vector<plg::Correspondence> corr;
      for (const auto& p : mj.at("points")) {
        if (!p.contains("xy_a") || !p.contains("xy_b")) {
          throw plg::DataError(args.matches[k] + ": --h-est needs matched positions (xy_a, xy_b)");
        }
        corr.push_back({{p["xy_a"][0].get<double>(), p["xy_a"][1].get<double>()},
                        {p["xy_b"][0].get<double>(), p["xy_b"][1].get<double>()}});
      }
      double err = std::numeric_limits<double>::infinity();
      try {
        const auto r = plg::ransac_homography(
            corr, {args.ransac_threshold, args.ransac_iterations, args.seed});
        err = plg::corner_error(r.h, h_gt, w, h);
        entry["inliers"] = r.inliers.size();
      } catch (const plg::Error&) {
        entry["inliers"] = 0;  // no estimate counts as an infinite error
      }
      entry["corner_error"] = std::isfinite(err) ? Json(err) : Json("inf");
      corner_errors.push_back(err);
    }
    pairs.push_back(entry);
  }

  auto mean = [](const std::vector<double>& v) {
    if (v.empty()) return Json(nullptr);
    double s = 0.0;
    for (double x : v) s += x;
    return Json(s / double(v.size()));
  };
  Json summary = {{"pairs", pairs},
                  {"mean_point_ap", mean(point_aps)},
                  {"mean_line_ap", mean(line_aps)}};
  if (args.h_est) {
    const std::vector<double> thresholds = {1.0, 3.0, 5.0};
    const auto auc = plg::corner_auc(corner_errors, thresholds);
    Json a = Json::object();
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      a["auc@" + std::to_string(int(thresholds[t])) + "px"] = auc[t];
    }
    summary["corner_auc"] = a;
  }
  emit(summary, args.summary);
  return kOk;
}

// ---- train-tiny ----------------------------------------------------------

struct TrainArgs {
  std::string config, out, loss_csv;
  std::optional<std::size_t> steps;
  std::optional<double> lr;
};

double recall(const std::vector<plg::IndexPair>& gt, const auto& predicted) {
  if (gt.empty()) return 1.0;
  const std::set<plg::IndexPair> want(gt.begin(), gt.end());
  std::size_t hit = 0;
  for (const auto& m : predicted) hit += want.count({m.i, m.j});
  return double(hit) / double(want.size());
}

int run_train(const TrainArgs& args) {
  auto cfg = plg::io::load_train_config(args.config);
  if (args.steps) cfg.steps = *args.steps;
  if (args.lr) cfg.learning_rate = *args.lr;

  const auto synth = plg::synth_pair(cfg.synth);
  auto params = plg::init_model(cfg.model, cfg.init_seed);
  std::vector<plg::TrainingPair> data = {{plg::prepare_pair(synth.a, synth.b), synth.gt}};
  const auto result = plg::train_tiny(params, data, cfg.steps, cfg.learning_rate);
  plg::io::save_weights(args.out, params);

  const std::string csv_path = args.loss_csv.empty() ? args.out + ".loss.csv" : args.loss_csv;
  std::ostringstream csv;
  csv << "step,loss\n" << std::setprecision(17);
  for (std::size_t s = 0; s < result.losses.size(); ++s) csv << s << ',' << result.losses[s] << "\n";
  csv << result.losses.size() << ',' << result.final_loss << "\n";
  plg::io::write_file(csv_path, csv.str());

  plg::MatchOptions opt;
  opt.tau = cfg.tau;
  opt.policy.enabled = false;
  const auto out = plg::match_features(params, synth.a, synth.b, opt);
  const double initial = result.losses.empty() ? result.final_loss : result.losses.front();
  emit({{"steps", cfg.steps},
        {"initial_loss", initial},
        {"final_loss", result.final_loss},
        {"point_recall", recall(synth.gt.points.positives, out.matches.points)},
        {"line_recall", recall(synth.gt.lines.positives, out.matches.lines)},
        {"weights", args.out},
        {"loss_csv", csv_path}},
       "-");
  return kOk;
}

// ---- gradcheck -----------------------------------------------------------

struct GradArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  double step = 1e-5;
  double tolerance = 1e-4;
};

int run_gradcheck(const GradArgs& args) {
  plg::io::TrainConfig cfg;
  if (!args.config.empty()) {
    cfg = plg::io::load_train_config(args.config);
  } else {
    cfg.model = {2, 8, 4, 2};
    cfg.synth.points = 6;
    cfg.synth.lines = 3;
    cfg.synth.descriptor_dim = 8;
  }
  if (args.seed) {
    cfg.init_seed = *args.seed;
    cfg.synth.seed = *args.seed;
  }
  const auto synth = plg::synth_pair(cfg.synth);
  const auto params = plg::init_model(cfg.model, cfg.init_seed);
  const auto report =
      plg::loss_grad_check(params, plg::prepare_pair(synth.a, synth.b), synth.gt, args.step);
  const auto names = params.names();
  std::cout << std::setprecision(6) << "entries checked: " << report.entries_checked << "\n"
            << "max relative error: " << report.max_error << " at " << names[report.param] << "["
            << report.entry << "] (analytic " << report.analytic << ", numeric " << report.numeric
            << ")\n";
  return report.max_error < args.tolerance ? kOk : kNumeric;
}

// ---- bench ---------------------------------------------------------------

struct BenchArgs {
  std::string features_a, features_b, weights, out;
  std::size_t repeat = 5;
  std::vector<double> alphas = plg::kBenchAlphas;
};

int run_bench(const BenchArgs& args) {
  const auto params = plg::io::load_weights(resolve_weights(args.weights));
  const auto a = plg::io::load_features(args.features_a);
  const auto b = plg::io::load_features(args.features_b);
  const auto rows = plg::run_bench(params, {{a, b}}, args.alphas, args.repeat);

  std::cout << std::fixed << std::setprecision(3);
  std::cout << "alpha  mean_exit  total_ms  block_ms\n";
  Json out = Json::array();
  for (const auto& r : rows) {
    std::cout << std::setw(5) << r.alpha << "  " << std::setw(9) << r.mean_exit_layer << "  "
              << std::setw(8) << r.mean_total_ms << " ";
    for (double ms : r.mean_block_ms) std::cout << ' ' << ms;
    std::cout << "\n";
    out.push_back({{"alpha", r.alpha},
                   {"mean_exit_layer", r.mean_exit_layer},
                   {"exit_histogram", r.exit_histogram},
                   {"mean_block_ms", r.mean_block_ms},
                   {"mean_total_ms", r.mean_total_ms}});
  }
  bool monotone = true;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    if (rows[k].alpha >= rows[k - 1].alpha && rows[k].mean_exit_layer < rows[k - 1].mean_exit_layer) {
      monotone = false;
    }
  }
  std::cout << "exit layer nondecreasing in alpha: " << (monotone ? "yes" : "no") << "\n";
  if (!args.out.empty()) plg::io::write_json(args.out, {{"rows", out}, {"monotone", monotone}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point and line feature matcher"};
  app.require_subcommand(1);

  MatchArgs match;
  auto* m = app.add_subcommand("match", "Match two feature files");
  m->add_option("--features-a", match.features_a)->required();
  m->add_option("--features-b", match.features_b)->required();
  m->add_option("--weights", match.weights, "Weight container (default: $PLG_WEIGHTS)");
  m->add_option("--tau", match.tau, "Match score threshold");
  m->add_option("--alpha", match.alpha, "Early-exit node fraction");
  m->add_option("--merge-radius", match.merge_radius, "Endpoint merge radius in px");
  m->add_flag("--no-early-exit", match.no_early_exit);
  m->add_option("--out", match.out, "Output JSON (default: stdout)");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate synthetic pairs with ground truth");
  s->add_option("--config", synth.config, "Synth config JSON");
  s->add_option("--out-dir", synth.out_dir)->required();
  s->add_option("--pairs", synth.pairs);

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Precision/recall, AP and corner AUC");
  e->add_option("--matches", eval.matches)->required();
  e->add_option("--gt", eval.gts)->required();
  e->add_flag("--h-est", eval.h_est, "Estimate homographies with RANSAC and report corner AUC");
  e->add_option("--ransac-threshold", eval.ransac_threshold);
  e->add_option("--ransac-iterations", eval.ransac_iterations);
  e->add_option("--seed", eval.seed);
  e->add_option("--csv", eval.csv, "Per-rank precision/recall CSV");
  e->add_option("--summary", eval.summary, "Summary JSON (default: stdout)");

  TrainArgs train;
  auto* t = app.add_subcommand("train-tiny", "Overfit a small model on one synthetic pair");
  t->add_option("--config", train.config)->required();
  t->add_option("--steps", train.steps);
  t->add_option("--lr", train.lr);
  t->add_option("--out", train.out)->required();
  t->add_option("--loss-csv", train.loss_csv);

  GradArgs grad;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of the loss gradient");
  g->add_option("--config", grad.config);
  g->add_option("--seed", grad.seed);
  g->add_option("--step", grad.step);
  g->add_option("--tolerance", grad.tolerance);

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Per-block latency and exit layers over an alpha sweep");
  b->add_option("--features-a", bench.features_a)->required();
  b->add_option("--features-b", bench.features_b)->required();
  b->add_option("--weights", bench.weights);
  b->add_option("--repeat", bench.repeat);
  b->add_option("--alphas", bench.alphas);
  b->add_option("--out", bench.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*m) return run_match(match);
    if (*s) return run_synth(synth);
    if (*e) return run_eval(eval);
    if (*t) return run_train(train);
    if (*g) return run_gradcheck(grad);
    if (*b) return run_bench(bench);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  } catch (const plg::NumericError& err) {
    std::cerr << "numeric error: " << err.what() << "\n";
    return kNumeric;
  } catch (const plg::Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kData;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kData;
  }
  return kUsage;
}
