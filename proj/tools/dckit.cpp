#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dckit/io.hpp"
#include "dckit/rng.hpp"
#include "dckit/toy.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dckit;

namespace {

struct CondenseFlags {
  std::string dataset;
  std::string out = "out";
  std::string config_file;
  cond::CondenseConfig cfg;
  std::string mode = "collective", warmup = "bilevel", distance = "layerwise_cosine";
  std::string init = "real_sample", loss = "cross_entropy", model = "convnet";
};

void add_condense_flags(CLI::App* app, CondenseFlags& f) {
  app->add_option("--dataset", f.dataset, "dataset spec (idx:|rawf32:|builtin:)")->required();
  app->add_option("--out", f.out, "output directory");
  app->add_option("--config", f.config_file, "JSON condense config (flags override)");
  app->add_option("--ipc", f.cfg.ipc, "images per class");
  app->add_option("--mode", f.mode, "class_wise|class_collective");
  app->add_option("--warmup", f.warmup, "none|simple|bilevel");
  app->add_option("--ko", f.cfg.outer_loops, "outer loops K_o");
  app->add_option("--ki", f.cfg.steps_per_stage, "S-updates per stage K_i");
  app->add_option("--stages", f.cfg.stages, "model-training period T");
  app->add_option("--gamma-o", f.cfg.warmup_outer, "outer warm-up threshold");
  app->add_option("--gamma-i", f.cfg.warmup_inner, "inner warm-up threshold");
  app->add_option("--eta-s", f.cfg.eta_s, "synthetic lr");
  app->add_option("--eta-theta", f.cfg.eta_theta, "model lr");
  app->add_option("--batch", f.cfg.real_batch_per_class, "real batch per class");
  app->add_option("--distance", f.distance, "layerwise_cosine|l2");
  app->add_flag("--augment", f.cfg.augment, "differentiable Siamese augmentation");
  app->add_option("--init", f.init, "real_sample|gaussian_noise");
  app->add_option("--seed", f.cfg.seed, "master seed");
  app->add_option("--model", f.model, "linear|mlp|convnet");
  app->add_option("--width", f.cfg.model_width, "convnet channels");
  app->add_option("--depth", f.cfg.model_depth, "convnet blocks");
  app->add_option("--loss", f.loss, "cross_entropy|hinge");
  app->add_option("--gram-every", f.cfg.gram_every, "NTK Gram snapshot cadence (0=off)");
  app->add_option("--group-size", f.cfg.class_group_size, "class subgrouping size (0=off)");
}

cond::CondenseConfig resolve_condense(const CondenseFlags& f, const CLI::App* app) {
  cond::CondenseConfig cfg = f.cfg;
  if (!f.config_file.empty()) {
    cfg = io::condense_config_from_json(io::read_text(f.config_file));
    // flags that were given explicitly override file values
    auto take = [&](const char* name, auto member, auto value) {
      if (app->count(name) > 0) cfg.*member = value;
    };
    take("--ipc", &cond::CondenseConfig::ipc, f.cfg.ipc);
    take("--ko", &cond::CondenseConfig::outer_loops, f.cfg.outer_loops);
    take("--ki", &cond::CondenseConfig::steps_per_stage, f.cfg.steps_per_stage);
    take("--stages", &cond::CondenseConfig::stages, f.cfg.stages);
    take("--gamma-o", &cond::CondenseConfig::warmup_outer, f.cfg.warmup_outer);
    take("--gamma-i", &cond::CondenseConfig::warmup_inner, f.cfg.warmup_inner);
    take("--eta-s", &cond::CondenseConfig::eta_s, f.cfg.eta_s);
    take("--eta-theta", &cond::CondenseConfig::eta_theta, f.cfg.eta_theta);
    take("--batch", &cond::CondenseConfig::real_batch_per_class, f.cfg.real_batch_per_class);
    take("--seed", &cond::CondenseConfig::seed, f.cfg.seed);
    take("--width", &cond::CondenseConfig::model_width, f.cfg.model_width);
    take("--depth", &cond::CondenseConfig::model_depth, f.cfg.model_depth);
    take("--gram-every", &cond::CondenseConfig::gram_every, f.cfg.gram_every);
    take("--group-size", &cond::CondenseConfig::class_group_size, f.cfg.class_group_size);
    if (app->count("--augment") > 0) cfg.augment = f.cfg.augment;
  }
  if (f.config_file.empty() || app->count("--mode") > 0)
    cfg.matching_mode = cond::match_mode_from(f.mode);
  if (f.config_file.empty() || app->count("--warmup") > 0) cfg.warmup = cond::warmup_from(f.warmup);
  if (f.config_file.empty() || app->count("--distance") > 0)
    cfg.distance = cond::distance_from(f.distance);
  if (f.config_file.empty() || app->count("--init") > 0)
    cfg.init = cond::init_strategy_from(f.init);
  if (f.config_file.empty() || app->count("--model") > 0)
    cfg.model_kind = nn::model_kind_from(f.model);
  if (f.config_file.empty() || app->count("--loss") > 0)
    cfg.loss = f.loss == "hinge" ? nn::LossKind::hinge : nn::LossKind::cross_entropy;
  return cfg;
}

int run_condense(const CondenseFlags& f, const CLI::App* app) {
  cond::CondenseConfig cfg = resolve_condense(f, app);
  data::DatasetContainer ds = io::load_dataset(f.dataset);
  fs::create_directories(f.out);
  auto [synth, log] = cond::condense(ds, cfg);
  io::save_condensed(synth, cfg, f.out + "/condensed");
  io::write_runlog_csv(log, f.out + "/runlog.csv");
  if (!log.gram_snapshots.empty()) io::write_gram_series(log.gram_snapshots, f.out + "/grams");
  for (const auto& w : log.warnings) std::cerr << "warning: " << w << "\n";
  const double last = log.rows.empty() ? 0.0 : log.rows.back().loss;
  std::printf("condense ok: dataset=%s ipc=%lld steps=%zu final_loss=%.6f out=%s\n",
              ds.name.c_str(), static_cast<long long>(cfg.ipc), log.rows.size(), last,
              f.out.c_str());
  return 0;
}

int run_eval(const std::string& condensed, const std::string& dataset, int64_t runs,
             int64_t epochs, int64_t width, int depth, uint64_t seed, const std::string& out,
             bool augment) {
  auto loaded = io::load_condensed(condensed);
  data::DatasetContainer ds = io::load_dataset(dataset);
  eval::EvalProtocol p;
  p.n_models = runs;
  p.epochs = epochs;
  p.model_width = width;
  p.model_depth = depth;
  p.seed_base = seed;
  p.augment = augment;
  auto res = eval::evaluate(loaded.set, ds, p);
  if (res.degenerate) std::cerr << "warning: degenerate synthetic set (all-equal pixels)\n";
  std::ostringstream csv;
  csv << "method,dataset,ipc,mean,std\n";
  csv << "condensed," << ds.name << "," << loaded.set.ipc << "," << res.mean << "," << res.stddev
      << "\n";
  if (!out.empty()) {
    fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path().string());
    io::write_text(out, csv.str());
  }
  std::printf("eval ok: mean=%.4f std=%.4f runs=%lld\n", res.mean, res.stddev,
              static_cast<long long>(runs));
  return 0;
}

int run_toy(double alpha, double beta, int trials, int64_t n, double eps, double lambda,
            uint64_t seed, const std::string& out) {
  toy::ToySpec spec;
  spec.alpha = alpha;
  spec.beta = beta;
  spec.n = n;
  spec.eps = eps;
  spec.lambda = lambda;
  spec.seed = seed;
  auto rep = toy::verify_bounds(spec, trials);
  fs::create_directories(out);
  std::ostringstream csv;
  csv << "alpha,beta,strategy,R,bound\n";
  for (const auto& t : rep.trials) {
    csv << alpha << "," << beta << ",class_wise," << t.classwise_R << "," << rep.bound << "\n";
    csv << alpha << "," << beta << ",class_collective," << t.collective_R << "," << rep.bound
        << "\n";
  }
  io::write_text(out + "/toy.csv", csv.str());
  json j;
  j["alpha"] = alpha;
  j["beta"] = beta;
  j["trials"] = trials;
  j["bound"] = rep.bound;
  j["max_classwise_R"] = rep.max_classwise_R;
  j["min_collective_R"] = rep.min_collective_R;
  j["mc_tol"] = rep.mc_tol;
  j["classwise_within_bound"] = rep.max_classwise_R <= rep.bound + rep.mc_tol + 0.03;
  io::write_text(out + "/toy_report.json", j.dump(2));
  std::printf("toy ok: bound=%.4f max_classwise_R=%.4f min_collective_R=%.4f trials=%d\n",
              rep.bound, rep.max_classwise_R, rep.min_collective_R, trials);
  return 0;
}

int run_ntk(const CondenseFlags& f, const CLI::App* app) {
  cond::CondenseConfig cfg = resolve_condense(f, app);
  if (cfg.gram_every <= 0) cfg.gram_every = 10;
  data::DatasetContainer ds = io::load_dataset(f.dataset);
  fs::create_directories(f.out);
  auto [synth, log] = cond::condense(ds, cfg);
  require(log.gram_snapshots.size() >= 2, ErrorKind::config,
          "ntk: fewer than two Gram snapshots; increase K_o or lower --gram-every");
  auto vel = eval::ntk_velocity(log.gram_snapshots);
  std::ostringstream csv;
  csv << "step,velocity\n";
  for (size_t i = 0; i < vel.size(); ++i)
    csv << log.gram_snapshots[i + 1].first << "," << vel[i] << "\n";
  io::write_text(f.out + "/ntk_velocity.csv", csv.str());
  io::write_gram_series(log.gram_snapshots, f.out + "/grams");
  std::printf("ntk ok: snapshots=%zu max_velocity=%.5f out=%s\n", log.gram_snapshots.size(),
              *std::max_element(vel.begin(), vel.end()), f.out.c_str());
  return 0;
}

int run_continual(const std::string& tasks_csv, int64_t memory, const std::string& builder,
                  int64_t epochs, uint64_t seed, int64_t width, int depth,
                  const std::string& out, const CondenseFlags& cf, const CLI::App* capp) {
  std::vector<std::string> specs;
  std::istringstream ss(tasks_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) specs.push_back(tok);
  require(specs.size() >= 1, ErrorKind::config, "continual: no tasks given");

  eval::ContinualConfig cfg;
  int offset = 0;
  std::vector<data::DatasetContainer> raw;
  int64_t total = 0;
  for (const auto& s : specs) {
    raw.push_back(io::load_dataset(s));
    total += raw.back().classes;
  }
  for (auto& ds : raw) {
    cfg.tasks.push_back(data::shift_labels(ds, offset, total));
    offset += static_cast<int>(ds.classes);
  }
  cfg.memory_per_class = memory;
  cfg.builder = builder == "condensed" ? eval::MemoryBuilder::condensed
                                       : eval::MemoryBuilder::ring_buffer;
  require(builder == "condensed" || builder == "ring_buffer", ErrorKind::config,
          "continual: builder must be ring_buffer or condensed");
  cfg.epochs_per_task = epochs;
  cfg.seed = seed;
  cfg.model_width = width;
  cfg.model_depth = depth;
  cfg.condense_cfg = resolve_condense(cf, capp);
  auto res = eval::continual_run(cfg);
  std::ostringstream csv;
  csv << "stage,avg_accuracy\n";
  for (size_t i = 0; i < res.stage_avg_accuracy.size(); ++i)
    csv << (i + 1) << "," << res.stage_avg_accuracy[i] << "\n";
  if (!out.empty()) {
    fs::create_directories(out);
    io::write_text(out + "/continual.csv", csv.str());
  }
  std::printf("continual ok: stages=%zu final_avg=%.4f\n", res.stage_avg_accuracy.size(),
              res.stage_avg_accuracy.back());
  return 0;
}

// Aggregates a run log into gnuplot-friendly columns: per-outer mean loss and
// collective-mode fraction.
int run_report(const std::string& runlog, const std::string& out) {
  std::istringstream in(io::read_text(runlog));
  std::string line;
  std::getline(in, line);  // header
  std::map<int64_t, std::pair<double, int64_t>> loss_acc;
  std::map<int64_t, int64_t> collective_count;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string outer, inner, mode, loss, wall;
    std::getline(ls, outer, ',');
    std::getline(ls, inner, ',');
    std::getline(ls, mode, ',');
    std::getline(ls, loss, ',');
    std::getline(ls, wall, ',');
    const int64_t o = std::stoll(outer);
    loss_acc[o].first += std::stod(loss);
    loss_acc[o].second += 1;
    if (mode == "class_collective") collective_count[o] += 1;
  }
  std::ostringstream os;
  os << "# outer mean_loss collective_fraction\n";
  for (const auto& [o, acc] : loss_acc)
    os << o << " " << acc.first / double(acc.second) << " "
       << double(collective_count[o]) / double(acc.second) << "\n";
  io::write_text(out, os.str());
  std::printf("report ok: %zu outer loops -> %s\n", loss_acc.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dckit: dataset condensation by gradient matching"};
  app.require_subcommand(1);

  CondenseFlags cf;
  auto* c_condense = app.add_subcommand("condense", "synthesize a condensed dataset");
  add_condense_flags(c_condense, cf);

  std::string e_condensed, e_dataset, e_out;
  int64_t e_runs = 20, e_epochs = 200, e_width = 64;
  int e_depth = 3;
  uint64_t e_seed = 0;
  bool e_augment = false;
  auto* c_eval = app.add_subcommand("eval", "train-from-scratch accuracy of a condensed set");
  c_eval->add_option("--condensed", e_condensed, "artifact stem (no extension)")->required();
  c_eval->add_option("--dataset", e_dataset, "dataset spec providing the test split")->required();
  c_eval->add_option("--runs", e_runs);
  c_eval->add_option("--epochs", e_epochs);
  c_eval->add_option("--width", e_width);
  c_eval->add_option("--depth", e_depth);
  c_eval->add_option("--seed", e_seed);
  c_eval->add_option("--out", e_out, "CSV output path");
  c_eval->add_flag("--augment", e_augment);

  double t_alpha = 1.0, t_beta = 4.0, t_eps = 0.2, t_lambda = 0.01;
  int t_trials = 20;
  int64_t t_n = 100000;
  uint64_t t_seed = 0;
  std::string t_out = "out";
  auto* c_toy = app.add_subcommand("toy", "analytical two-Gaussian bound verification");
  c_toy->add_option("--alpha", t_alpha);
  c_toy->add_option("--beta", t_beta);
  c_toy->add_option("--trials", t_trials);
  c_toy->add_option("--n", t_n);
  c_toy->add_option("--eps", t_eps);
  c_toy->add_option("--lambda", t_lambda);
  c_toy->add_option("--seed", t_seed);
  c_toy->add_option("--out", t_out);

  CondenseFlags nf;
  auto* c_ntk = app.add_subcommand("ntk", "NTK Gram velocity during condensation");
  add_condense_flags(c_ntk, nf);

  std::string ct_tasks, ct_builder = "ring_buffer", ct_out;
  int64_t ct_memory = 10, ct_epochs = 30, ct_width = 32;
  int ct_depth = 3;
  uint64_t ct_seed = 0;
  CondenseFlags ctf;
  auto* c_ct = app.add_subcommand("continual", "sequential tasks with replay memory");
  c_ct->add_option("--tasks", ct_tasks, "comma-separated dataset specs")->required();
  c_ct->add_option("--memory", ct_memory, "replay images per class");
  c_ct->add_option("--builder", ct_builder, "ring_buffer|condensed");
  c_ct->add_option("--epochs", ct_epochs);
  c_ct->add_option("--seed", ct_seed);
  c_ct->add_option("--width", ct_width);
  c_ct->add_option("--depth", ct_depth);
  c_ct->add_option("--out", ct_out);
  c_ct->add_option("--ko", ctf.cfg.outer_loops, "condensed-memory K_o");
  c_ct->add_option("--ki", ctf.cfg.steps_per_stage);
  c_ct->add_option("--stages", ctf.cfg.stages);
  c_ct->add_option("--cwidth", ctf.cfg.model_width, "condense matching net width");

  std::string r_runlog, r_out = "report.dat";
  auto* c_report = app.add_subcommand("report", "gnuplot-friendly run-log aggregation");
  c_report->add_option("--runlog", r_runlog, "runlog.csv from condense")->required();
  c_report->add_option("--out", r_out);

  try {
    app.parse(argc, argv);
    if (*c_condense) return run_condense(cf, c_condense);
    if (*c_eval)
      return run_eval(e_condensed, e_dataset, e_runs, e_epochs, e_width, e_depth, e_seed, e_out,
                      e_augment);
    if (*c_toy) return run_toy(t_alpha, t_beta, t_trials, t_n, t_eps, t_lambda, t_seed, t_out);
    if (*c_ntk) return run_ntk(nf, c_ntk);
    if (*c_ct)
      return run_continual(ct_tasks, ct_memory, ct_builder, ct_epochs, ct_seed, ct_width,
                           ct_depth, ct_out, ctf, c_ct);
    if (*c_report) return run_report(r_runlog, r_out);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::config: return 2;
      case ErrorKind::data: return 3;
      case ErrorKind::numeric: return 4;
      case ErrorKind::internal: return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
