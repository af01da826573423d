#include "stencilseer/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "stencilseer/errors.hpp"
#include "stencilseer/experiments.hpp"
#include "stencilseer/model.hpp"
#include "stencilseer/run_config.hpp"
#include "stencilseer/verify.hpp"

namespace stencilseer {
namespace {

namespace fs = std::filesystem;

/// Raised when a command completed but its result check failed; the
/// artifacts are complete and kept.
struct CheckFailed {
  std::string message;
};

class RunDir {
 public:
  explicit RunDir(fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    lock_ = dir_ / ".lock";
    std::FILE* f = std::fopen(lock_.c_str(), "wx");
    if (!f) {
      throw std::runtime_error("run directory " + dir_.string() +
                               " is in use (remove " + lock_.string() +
                               " if no run is active)");
    }
    std::fclose(f);
  }
  RunDir(const RunDir&) = delete;
  RunDir& operator=(const RunDir&) = delete;
  ~RunDir() {
    std::error_code ec;
    fs::remove(lock_, ec);
  }

  /// Records a file this run writes so a failed run can remove it.
  fs::path touch(const std::string& name) {
    fs::path p = dir_ / name;
    touched_.insert(p);
    return p;
  }
  void discard() {
    std::error_code ec;
    for (const auto& p : touched_) fs::remove(p, ec);
  }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  fs::path lock_;
  std::set<fs::path> touched_;
};

Dataset load_or_generate(const RunConfig& cfg) {
  const std::string& path = cfg.get("dataset");
  if (path.empty()) return make_dataset(cfg.gen_config());
  Dataset ds = read_dataset(path);
  if (ds.family != cfg.family()) {
    throw ConfigError("dataset family " + std::string(family_name(ds.family)) +
                      " does not match config family " +
                      std::string(family_name(cfg.family())));
  }
  return ds;
}

fs::path weights_path(const RunConfig& cfg) {
  const std::string& w = cfg.get("weights");
  return w.empty() ? cfg.out_dir() / "weights.txt" : fs::path(w);
}

Model load_model(const RunConfig& cfg) {
  Model m = read_weights(weights_path(cfg));
  if (m.config.family != cfg.family()) {
    throw ConfigError("weights are for family " +
                      std::string(family_name(m.config.family)) +
                      ", config says " + std::string(family_name(cfg.family())));
  }
  return m;
}

const Sample& pick_sample(const Dataset& ds, const RunConfig& cfg) {
  const auto idx = cfg.unsigned_integer("sample");
  const auto& pool = ds.val.empty() ? ds.train : ds.val;
  if (idx >= pool.size()) {
    throw ConfigError("sample index " + std::to_string(idx) + " outside the " +
                      std::to_string(pool.size()) + " validation samples");
  }
  return ds.samples[pool[idx]];
}

void cmd_gen(const RunConfig& cfg, RunDir& run, std::ostream& out) {
  const GenConfig g = cfg.gen_config();
  const Dataset ds = make_dataset(g);
  const fs::path p = run.touch("dataset.bin");
  write_dataset(ds, p);
  out << "dataset " << p.string() << " family=" << family_name(g.family)
      << " samples=" << ds.samples.size() << " train=" << ds.train.size()
      << " val=" << ds.val.size() << '\n';
}

void cmd_train(const RunConfig& cfg, RunDir& run, std::ostream& out) {
  const Dataset ds = load_or_generate(cfg);
  const ModelConfig mc = cfg.model_config();
  Model model = build_model(mc, cfg.unsigned_integer("seed"));
  TrainOptions opts = cfg.train_options();
  opts.on_epoch = [&](std::size_t e, double tr, double va) {
    if (e % 10 == 0) {
      out << "epoch " << e << " train_mse " << std::setprecision(4) << tr
          << " val_mse " << va << '\n';
    }
    return true;
  };
  const TrainReport rep = train(model, ds, opts);
  if (rep.diverged) throw DivergenceError("training diverged");
  write_weights(model, run.touch("weights.txt"));
  write_train_report_csv(rep, run.touch("train_report.csv"));
  out << "trained " << rep.epochs_run << " epochs (" << rep.stop_reason
      << ") final train_mse " << std::setprecision(6) << rep.final_train_mse()
      << " val_mse " << rep.final_val_mse() << " in " << std::setprecision(3)
      << rep.wall_seconds << " s\n";
}

void cmd_verify(const RunConfig& cfg, RunDir& run, std::ostream& out) {
  const Model model = load_model(cfg);
  const Dataset ds = load_or_generate(cfg);
  const GenConfig g = cfg.gen_config();
  const Sample& s = pick_sample(ds, cfg);
  const ActivationReport act = activation_report(model, s);
  write_activation_csv(act, run.touch("activation.csv"));

  std::ofstream rep(run.touch("verify.txt"));
  rep << std::setprecision(17);
  rep << "family=" << family_name(model.config.family) << '\n';
  rep << "train_mse=" << mean_boundary_mse(model, ds, ds.train) << '\n';
  rep << "val_mse=" << mean_boundary_mse(model, ds, ds.val) << '\n';
  rep << "zero_feature_max_abs=" << act.zero_feature_max_abs() << '\n';
  out << std::setprecision(10);
  if (model.config.family == Family::coupled) {
    rep << "similarity=n/a\n";
    out << "similarity n/a (coupled stacks have no linear stencil)\n";
  } else {
    const Stencil learned = compose_linear(model.encoder);
    const AnalyticStencil truth =
        analytic_stencil(model.config.family, g, model.config.depth());
    write_stencil(learned, run.touch("learned_stencil.txt"));
    write_stencil(truth.stencil, run.touch("analytic_stencil.txt"));
    double sim = 0.0;
    try {
      sim = placement_similarity(learned, truth.stencil);
    } catch (const std::domain_error&) {
    }
    rep << "similarity=" << sim << '\n';
    out << "similarity " << sim << '\n';
  }
  out << "zero_feature_max_abs " << act.zero_feature_max_abs() << '\n';
  if (!rep) throw std::runtime_error("failed writing verify.txt");
}

void print_ablation(const AblationResult& r, std::ostream& out) {
  out << std::setprecision(4);
  for (const auto& s : r.settings) {
    out << s.label << " train_mse " << s.train_mse << " activation_err "
        << s.activation_err << " epochs " << s.epochs << " similarity "
        << std::setprecision(8) << s.similarity << std::setprecision(4) << '\n';
  }
}

void cmd_ablate(const RunConfig& cfg, RunDir& run, std::ostream& out,
                const std::string& axis) {
  if (cfg.family() != Family::elliptic) {
    throw ConfigError("ablate runs on elliptic data; set family=elliptic");
  }
  const Dataset ds = load_or_generate(cfg);
  AblationOptions opts;
  opts.train = cfg.train_options();
  opts.seed = cfg.unsigned_integer("seed");
  if (!cfg.is_auto("lambda_zf")) opts.lambda_zf = cfg.number("lambda_zf");
  const GenConfig g = cfg.gen_config();
  AblationResult r;
  if (axis == "depth") {
    r = ablate_depth(ds, g, cfg.list("depths"), opts);
  } else {
    r = ablate_width(ds, g, cfg.list("k1"), opts);
  }
  write_ablation_csv(r, run.touch("ablation_" + axis + ".csv"));
  print_ablation(r, out);
  if (!r.passed) throw CheckFailed{"ablation " + axis + " check failed: " + r.failure};
  out << "ablation " << axis << " check passed\n";
}

void cmd_probe(const RunConfig& cfg, RunDir& run, std::ostream& out,
               const std::string& kind) {
  const Model model = load_model(cfg);
  const Dataset ds = load_or_generate(cfg);
  const Sample& s = pick_sample(ds, cfg);
  ProbeResult r;
  if (kind == "scale") {
    Sample base = s;
    base.image = cfg.number("base_scale") * s.image;
    r = probe_scaling(model, base, cfg.number("factor"));
    write_probe_csv(r, run.touch("probe_scaling.csv"));
    for (const auto& n : export_maps(model, base, run.dir(), "probe_scaling_base_"))
      run.touch(n);
    Sample scaled = base;
    scaled.image = r.factor * base.image;
    for (const auto& n : export_maps(model, scaled, run.dir(), "probe_scaling_scaled_"))
      run.touch(n);
    out << "scaling factor " << r.factor << " ratios";
    for (double x : r.ratios) out << ' ' << std::setprecision(10) << x;
    out << '\n';
  } else {
    const std::string& mode_s = cfg.get("perturb");
    PerturbMode mode;
    if (mode_s == "additive") {
      mode = PerturbMode::additive;
    } else if (mode_s == "zeroing") {
      mode = PerturbMode::zeroing;
    } else {
      throw ConfigError("perturb must be additive or zeroing");
    }
    const double amplitude = cfg.resolved().number("amplitude");
    r = probe_missing(model, s, amplitude, mode);
    write_probe_csv(r, run.touch("probe_missing.csv"));
    const Sample perturbed = perturb_row(s, r.perturbed_row, amplitude, mode);
    for (const auto& n : export_maps(model, perturbed, run.dir(), "probe_missing_perturbed_"))
      run.touch(n);
    for (const auto& n : export_maps(model, s, run.dir(), "probe_missing_control_"))
      run.touch(n);
    out << "perturbed row " << r.perturbed_row << " flagged";
    for (auto row : r.flagged) out << ' ' << row;
    out << " control flagged " << r.control_flagged.size() << '\n';
  }
  if (!r.valid) throw CheckFailed{"probe invalid: " + r.invalid_reason};
  if (!r.passed) throw CheckFailed{"probe " + kind + " check failed"};
  out << "probe " << kind << " check passed\n";
}

void cmd_export_maps(const RunConfig& cfg, RunDir& run, std::ostream& out) {
  const Model model = load_model(cfg);
  const Dataset ds = load_or_generate(cfg);
  const Sample& s = pick_sample(ds, cfg);
  const auto names = export_maps(model, s, run.dir(), "maps_");
  for (const auto& n : names) run.touch(n);
  write_activation_csv(activation_report(model, s), run.touch("maps_activation.csv"));
  out << "wrote " << names.size() << " heatmaps to " << run.dir().string() << '\n';
}

}  // namespace

int run_command(int argc, const char* const* argv, std::ostream& out,
                std::ostream& err) {
  CLI::App app{"stencilseer: learn and verify finite-difference stencils"};
  app.require_subcommand(0, 1);
  std::string check_dir;
  app.add_option("--check", check_dir, "Re-validate a finished run directory");

  const std::vector<std::string> commands = {"gen",    "train", "verify",
                                             "ablate", "probe", "export-maps"};
  std::map<std::string, CLI::App*> subs;
  std::string config_path;
  std::map<std::string, std::string> overrides;
  std::string positional;
  for (const auto& c : commands) {
    CLI::App* sc = app.add_subcommand(c);
    subs[c] = sc;
    sc->add_option("--config", config_path, "key=value run configuration file");
    for (const auto& k : RunConfig::keys()) {
      const std::string names = k == "out_dir" ? "--out_dir,--out" : "--" + k;
      sc->add_option(names, overrides[k]);
    }
  }
  subs["ablate"]
      ->add_option("axis", positional, "depth or width")
      ->required()
      ->check(CLI::IsMember({"depth", "width"}));
  subs["probe"]
      ->add_option("kind", positional, "scale or missing")
      ->required()
      ->check(CLI::IsMember({"scale", "missing"}));

  try {
    std::vector<std::string> args;
    for (int i = argc - 1; i >= 1; --i) args.emplace_back(argv[i]);
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (!check_dir.empty()) {
    try {
      const auto problems = check_manifest(check_dir);
      for (const auto& p : problems) err << "check: " << p << '\n';
      if (!problems.empty()) return kExitFailure;
      out << "check: " << check_dir << " intact\n";
      return kExitOk;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return kExitFailure;
    }
  }

  std::string command;
  for (const auto& [name, sc] : subs)
    if (sc->parsed()) command = name;
  if (command.empty()) {
    err << app.help();
    return kExitUsage;
  }

  RunConfig cfg;
  try {
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& k : RunConfig::keys()) {
      const std::string names = "--" + k;
      if (subs[command]->count(names) > 0) cfg.set(k, overrides[k]);
    }
    cfg.resolved();
    cfg.gen_config();
    cfg.train_options();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  std::optional<RunDir> run;
  try {
    run.emplace(cfg.out_dir());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }

  int code = kExitOk;
  try {
    cfg.write(run->touch("resolved_config.txt"));
    try {
      if (command == "gen") {
        cmd_gen(cfg, *run, out);
      } else if (command == "train") {
        cmd_train(cfg, *run, out);
      } else if (command == "verify") {
        cmd_verify(cfg, *run, out);
      } else if (command == "ablate") {
        cmd_ablate(cfg, *run, out, positional);
      } else if (command == "probe") {
        cmd_probe(cfg, *run, out, positional);
      } else {
        cmd_export_maps(cfg, *run, out);
      }
    } catch (const CheckFailed& f) {
      err << "error: " << f.message << '\n';
      code = kExitFailure;
    }
    write_manifest(run->dir());
  } catch (const ConfigError& e) {
    run->discard();
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    run->discard();
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return code;
}

}  // namespace stencilseer
