// volumix: the single command-line surface over the segmentation lab.
// Subcommands cover data generation, training, evaluation, verification,
// benchmarking, and report assembly. Every command prints the seed and the
// digest of its effective configuration before doing any work, honors
// VOLUMIX_THREADS (default 1), and uses exit codes 0 (ok), 1 (usage),
// 2 (verification failure), 3 (runtime/data error).

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "volumix/bench.hpp"
#include "volumix/config.hpp"
#include "volumix/verify.hpp"

namespace {

using namespace volumix;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int env_threads() {
  const char* v = std::getenv("VOLUMIX_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (!end || *end != '\0' || n < 1 || n > 1024)
    throw UsageError("VOLUMIX_THREADS must be an integer in [1, 1024], got '" + std::string(v) +
                     "'");
  return static_cast<int>(n);
}

// Config-file values load first; flag-supplied pairs override them in order.
RunConfig effective_config(const std::string& config_path,
                           const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = load_config_file(config_path, cfg);
  for (const auto& [key, value] : overrides) {
    try {
      apply_kv(cfg, key, value);
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
  }
  return cfg;
}

void print_header(const RunConfig& cfg) {
  std::printf("seed=%llu config=%016llx\n", static_cast<unsigned long long>(cfg.seed),
              static_cast<unsigned long long>(config_digest(cfg)));
}

std::vector<int64_t> parse_lengths(const std::string& text) {
  std::vector<int64_t> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      size_t pos = 0;
      const int64_t v = std::stoll(tok, &pos);
      if (pos != tok.size() || tok.empty()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("--lengths: invalid integer '" + tok + "'");
    }
  }
  if (out.empty()) throw UsageError("--lengths: empty list");
  return out;
}

MetricsReport aggregate_label_pairs(const std::vector<ManifestEntry>& pred,
                                    const std::vector<ManifestEntry>& gt,
                                    const std::string& split, int num_classes, double tau_mm) {
  std::vector<std::string> pred_labels, gt_labels;
  for (const auto& e : pred)
    if (e.split == split) pred_labels.push_back(e.label);
  for (const auto& e : gt)
    if (e.split == split) gt_labels.push_back(e.label);
  if (gt_labels.empty()) throw DataError("eval: no '" + split + "' entries in manifest");
  if (pred_labels.size() != gt_labels.size())
    throw DataError("eval: prediction manifest has " + std::to_string(pred_labels.size()) +
                    " '" + split + "' entries, ground truth has " +
                    std::to_string(gt_labels.size()));
  MetricsReport agg;
  for (size_t i = 0; i < gt_labels.size(); ++i) {
    const MetricsReport r = evaluate_labels(to_label_volume(read_volx(pred_labels[i])),
                                            to_label_volume(read_volx(gt_labels[i])),
                                            num_classes, tau_mm);
    if (i == 0) {
      agg = r;
      continue;
    }
    for (size_t k = 0; k < agg.class_dsc.size(); ++k) {
      agg.class_dsc[k] += r.class_dsc[k];
      agg.class_miou[k] += r.class_miou[k];
      agg.class_nsd[k] += r.class_nsd[k];
    }
    agg.mean_dsc += r.mean_dsc;
    agg.mean_miou += r.mean_miou;
    agg.mean_nsd += r.mean_nsd;
    agg.n_voxels += r.n_voxels;
  }
  const double inv = 1.0 / static_cast<double>(gt_labels.size());
  for (size_t k = 0; k < agg.class_dsc.size(); ++k) {
    agg.class_dsc[k] *= inv;
    agg.class_miou[k] *= inv;
    agg.class_nsd[k] *= inv;
  }
  agg.mean_dsc *= inv;
  agg.mean_miou *= inv;
  agg.mean_nsd *= inv;
  return agg;
}

std::vector<VariantResult> read_report_csvs(const std::vector<std::string>& paths) {
  std::vector<VariantResult> rows;
  for (const auto& path : paths) {
    std::ifstream f(path);
    if (!f) throw DataError("report: cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line != "variant,dsc,miou,nsd,params,seconds")
      throw DataError("report: " + path + " is not a comparison CSV (bad header)");
    int lineno = 1;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::vector<std::string> fields;
      std::stringstream ss(line);
      std::string tok;
      while (std::getline(ss, tok, ',')) fields.push_back(tok);
      if (fields.size() != 6)
        throw DataError("report: " + path + ":" + std::to_string(lineno) + ": expected 6 fields");
      try {
        VariantResult vr;
        vr.variant = fields[0];
        vr.report.mean_dsc = std::stod(fields[1]);
        vr.report.mean_miou = std::stod(fields[2]);
        vr.report.mean_nsd = std::stod(fields[3]);
        vr.params = std::stoll(fields[4]);
        vr.seconds = std::stod(fields[5]);
        rows.push_back(std::move(vr));
      } catch (const std::exception&) {
        throw DataError("report: " + path + ":" + std::to_string(lineno) + ": unparseable row");
      }
    }
  }
  if (rows.empty()) throw DataError("report: no rows found");
  return rows;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << text;
}

int run(int argc, char** argv) {
  CLI::App app{"volumix: a desk-scale volumetric segmentation lab"};
  app.require_subcommand(1);
  app.footer("Config keys (usable in --config files and as flags): see each subcommand's help.");

  std::string config_path;
  std::vector<std::pair<std::string, std::string>> kv;

  // A flag that backs a config key; the value flows through the same
  // key=value path as config-file lines, and overrides them.
  auto key_opt = [&kv](CLI::App* cmd, const std::string& flag, const std::string& key,
                       const std::string& desc) {
    cmd->add_option_function<std::string>(
        flag, [&kv, key](const std::string& v) { kv.emplace_back(key, v); }, desc);
  };
  auto add_config = [&config_path](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value config file ('#' comments)");
  };
  auto add_seed = [&key_opt](CLI::App* cmd) { key_opt(cmd, "--seed", "seed", "PRNG seed"); };
  auto add_model_opts = [&key_opt](CLI::App* cmd) {
    key_opt(cmd, "--variant", "variant", "block variant: tsmamba|tshydra|mamba_swin|mambaout");
    key_opt(cmd, "--in-channels", "in_channels", "input channels");
    key_opt(cmd, "--num-classes", "num_classes", "segmentation classes incl. background");
    key_opt(cmd, "--stem-channels", "stem_channels", "stem width");
    key_opt(cmd, "--stage-depths", "stage_depths", "blocks per stage, comma list");
    key_opt(cmd, "--channels", "channels", "stage widths, comma list");
    key_opt(cmd, "--state-dim", "state_dim", "state dimension of the scan mixers");
    key_opt(cmd, "--window", "window", "attention window extent");
    key_opt(cmd, "--heads", "heads", "attention heads");
  };
  auto add_train_opts = [&key_opt](CLI::App* cmd) {
    key_opt(cmd, "--epochs", "epochs", "training epochs");
    key_opt(cmd, "--lr", "lr", "Adam learning rate");
    key_opt(cmd, "--batch-size", "batch_size", "volumes per optimizer step");
    key_opt(cmd, "--dice-weight", "dice_weight", "soft-Dice loss weight");
    key_opt(cmd, "--ce-weight", "ce_weight", "cross-entropy loss weight");
    key_opt(cmd, "--val-interval", "val_interval", "epochs between validations");
    key_opt(cmd, "--precision", "precision", "train (f32) or verify (f64)");
    key_opt(cmd, "--tau", "tau_mm", "NSD tolerance in mm (0: max spacing)");
    key_opt(cmd, "--manifest", "manifest", "dataset manifest path");
  };

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic phantom dataset");
  std::string gen_out;
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  add_config(gen);
  add_seed(gen);
  key_opt(gen, "--regime", "regime", "phantom regime: small_roi|multi_organ");
  gen->add_option_function<std::string>(
      "--extent",
      [&kv](const std::string& v) {
        kv.emplace_back("extent_d", v);
        kv.emplace_back("extent_h", v);
        kv.emplace_back("extent_w", v);
      },
      "cubic volume extent (sets extent_d/h/w)");
  key_opt(gen, "--extent-d", "extent_d", "depth extent");
  key_opt(gen, "--extent-h", "extent_h", "height extent");
  key_opt(gen, "--extent-w", "extent_w", "width extent");
  key_opt(gen, "--num-classes", "num_classes", "classes incl. background");
  key_opt(gen, "--noise-std", "noise_std", "additive Gaussian noise sigma");
  key_opt(gen, "--roi-frac-lo", "roi_frac_lo", "min foreground voxel fraction");
  key_opt(gen, "--roi-frac-hi", "roi_frac_hi", "max foreground voxel fraction");
  key_opt(gen, "--n-distractors", "n_distractors", "unlabeled distractor blobs");
  key_opt(gen, "--n-train", "n_train", "training volumes");
  key_opt(gen, "--n-val", "n_val", "validation volumes");
  key_opt(gen, "--n-test", "n_test", "test volumes");

  // train
  auto* tr = app.add_subcommand("train", "train one variant on a dataset manifest");
  std::string tr_out;
  tr->add_option("--out", tr_out, "output prefix for .ckpt/.csv")->required();
  add_config(tr);
  add_seed(tr);
  add_model_opts(tr);
  add_train_opts(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint (or label predictions)");
  std::string ev_ckpt, ev_pred, ev_split = "test";
  ev->add_option("--ckpt", ev_ckpt, "checkpoint to evaluate");
  ev->add_option("--pred-manifest", ev_pred,
                 "manifest whose label volumes are treated as predictions");
  ev->add_option("--split", ev_split, "manifest split to evaluate (default test)");
  add_config(ev);
  add_seed(ev);
  key_opt(ev, "--manifest", "manifest", "ground-truth dataset manifest");
  key_opt(ev, "--tau", "tau_mm", "NSD tolerance in mm (0: max spacing)");
  key_opt(ev, "--num-classes", "num_classes", "classes for --pred-manifest mode");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks per block");
  std::string gc_module = "all";
  gc->add_option("--module", gc_module, "all or one of the gradient-checkable modules");
  add_config(gc);
  add_seed(gc);

  // oracle-check
  auto* oc = app.add_subcommand("oracle-check", "structured-kernel and metric oracle sweeps");
  int oc_cases = 200;
  oc->add_option("--cases", oc_cases, "seeded cases per sweep");
  add_config(oc);
  add_seed(oc);

  // bench
  auto* be = app.add_subcommand("bench", "sequence-kernel scaling benchmark (CSV to stdout)");
  std::string be_kernel = "all", be_lengths = "256,512,1024,2048";
  int64_t be_state = 4, be_dim = 4;
  double be_min_ms = 20.0;
  be->add_option("--kernel", be_kernel, "all|scan|quasi|dense_scan|dense_quasi");
  be->add_option("--lengths", be_lengths, "comma list of sequence lengths");
  be->add_option("--state", be_state, "state dimension N");
  be->add_option("--dim", be_dim, "channel count d");
  be->add_option("--min-ms", be_min_ms, "minimum wall time per measurement");
  add_config(be);
  add_seed(be);

  // compare
  auto* cp = app.add_subcommand("compare", "train and evaluate all four variants");
  std::string cp_out;
  cp->add_option("--out", cp_out, "output directory for per-variant artifacts")->required();
  add_config(cp);
  add_seed(cp);
  add_model_opts(cp);
  add_train_opts(cp);

  // report
  auto* rp = app.add_subcommand("report", "merge comparison CSVs into one grid");
  std::vector<std::string> rp_inputs;
  rp->add_option("--in", rp_inputs, "comparison CSV files")->required()->expected(-1);
  add_config(rp);
  add_seed(rp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  set_max_threads(env_threads());
  const RunConfig cfg = effective_config(config_path, kv);
  print_header(cfg);

  if (app.got_subcommand(gen)) {
    const std::string manifest =
        dataset(phantom_of(cfg), cfg.n_train, cfg.n_val, cfg.n_test, gen_out);
    std::printf("manifest=%s\nvolumes=%d\n", manifest.c_str(),
                cfg.n_train + cfg.n_val + cfg.n_test);
    return 0;
  }

  if (app.got_subcommand(tr)) {
    if (cfg.manifest.empty()) throw UsageError("train: --manifest (or config manifest=) required");
    const TrainResult res = train(train_of(cfg), model_of(cfg), cfg.manifest, tr_out);
    std::printf("ckpt=%s\nlog=%s\nbest_val_dsc=%.9g\nbest_epoch=%d\nseconds=%.3f\n",
                res.ckpt_path.c_str(), res.log_path.c_str(), res.best_val_dsc, res.best_epoch,
                res.seconds);
    return 0;
  }

  if (app.got_subcommand(ev)) {
    if (ev_ckpt.empty() == ev_pred.empty())
      throw UsageError("eval: exactly one of --ckpt or --pred-manifest is required");
    if (cfg.manifest.empty()) throw UsageError("eval: --manifest (or config manifest=) required");
    const auto gt_entries = read_manifest(cfg.manifest);
    MetricsReport rep;
    std::string name;
    if (!ev_ckpt.empty()) {
      const SegNet<float> net = load_model(ev_ckpt);
      rep = evaluate_split(net, gt_entries, ev_split, cfg.tau_mm);
      name = block_kind_name(net.cfg.variant);
    } else {
      rep = aggregate_label_pairs(read_manifest(ev_pred), gt_entries, ev_split, cfg.num_classes,
                                  cfg.tau_mm);
      name = "pred";
    }
    std::fputs(metrics_csv(name, rep, true).c_str(), stdout);
    return 0;
  }

  if (app.got_subcommand(gc)) {
    if (gc_module != "all") {
      bool known = false;
      for (const auto& m : gradcheck_modules()) known = known || m == gc_module;
      if (!known) throw UsageError("gradcheck: unknown module '" + gc_module + "'");
    }
    bool all_pass = true;
    for (const ModuleCheck& mc : run_gradchecks(gc_module, cfg.seed)) {
      std::printf("%-12s max_rel_err=%.3e tol=%.0e %s\n", mc.name.c_str(), mc.max_rel_err,
                  mc.tolerance, mc.pass ? "PASS" : "FAIL");
      all_pass = all_pass && mc.pass;
    }
    std::printf("gradcheck: %s\n", all_pass ? "PASS" : "FAIL");
    return all_pass ? 0 : 2;
  }

  if (app.got_subcommand(oc)) {
    const OracleSweepResult s = run_seqmix_oracles(cfg.seed, oc_cases);
    const MetricsCheck m = run_metrics_checks(cfg.seed, oc_cases);
    std::printf("scan_vs_dense max_err=%.3e\n", s.max_scan_err);
    std::printf("quasi_vs_dense max_err=%.3e\n", s.max_quasi_err);
    std::printf("mixer_linearity max_err=%.3e\n", s.max_linearity_err);
    std::printf("dsc_miou_identity max_err=%.3e\n", m.max_identity_err);
    std::printf("nsd_monotonicity violations=%d\n", m.monotonicity_violations);
    std::printf("cases=%d\n", s.cases);
    const bool pass = s.max_scan_err < 1e-10 && s.max_quasi_err < 1e-10 &&
                      s.max_linearity_err < 1e-10 && m.max_identity_err < 1e-12 &&
                      m.monotonicity_violations == 0;
    std::printf("oracle-check: %s\n", pass ? "PASS" : "FAIL");
    return pass ? 0 : 2;
  }

  if (app.got_subcommand(be)) {
    bool known = be_kernel == "all";
    for (const auto& k : bench_kernels()) known = known || k == be_kernel;
    if (!known) throw UsageError("bench: unknown kernel '" + be_kernel + "'");
    std::vector<BenchRow> rows;
    try {
      rows = run_bench(be_kernel, parse_lengths(be_lengths), be_state, be_dim, be_min_ms,
                       cfg.seed);
    } catch (const DataError& e) {
      throw UsageError(e.what());  // bench reads no files: every data error is an argument
    }
    std::fputs(bench_csv(rows).c_str(), stdout);
    return 0;
  }

  if (app.got_subcommand(cp)) {
    if (cfg.manifest.empty())
      throw UsageError("compare: --manifest (or config manifest=) required");
    const auto rows = compare_variants(train_of(cfg), model_of(cfg), cfg.manifest, cp_out);
    const std::string grid = compare_grid(rows);
    write_text(cp_out + "/compare.csv", compare_csv(rows));
    write_text(cp_out + "/compare.txt", grid);
    std::fputs(grid.c_str(), stdout);
    return 0;
  }

  if (app.got_subcommand(rp)) {
    std::fputs(compare_grid(read_report_csvs(rp_inputs)).c_str(), stdout);
    return 0;
  }

  throw UsageError("no subcommand");  // unreachable: require_subcommand(1)
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const VerificationError& e) {
    std::fprintf(stderr, "verification failure: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
