#include "mdseg/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "CLI11.hpp"
#include "mdseg/checkpoint.hpp"
#include "mdseg/config.hpp"
#include "mdseg/error.hpp"
#include "mdseg/metrics.hpp"
#include "mdseg/pgm.hpp"
#include "mdseg/refine.hpp"

namespace mdseg {

std::vector<GradCheckReport> grad_check_suite(const ArchPreset& preset, std::uint64_t seed, int n_seeds,
                                              double tolerance) {
  std::vector<LayerSpec> layers = preset.trunk;
  layers.insert(layers.end(), preset.head.begin(), preset.head.end());
  if (!preset.head.empty() && layers.back().has_weights()) layers.back().out_channels = 2;
  std::vector<GradCheckReport> reports;
  for (int s = 0; s < n_seeds; ++s)
    for (const auto& l : layers) reports.push_back(grad_check(l, seed + static_cast<std::uint64_t>(s), tolerance));
  return reports;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigOptions {
  std::string file;
  std::vector<std::string> sets;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", file, "JSON run configuration");
    cmd->add_option("--set", sets, "Override a config field, e.g. train.epochs=5")->take_all();
  }

  RunConfig load() const {
    RunConfig c = file.empty() ? RunConfig{} : load_run_config(file);
    return apply_overrides(c, sets);
  }
};

// Accepts a domain index or a domain name from the dataset.
int resolve_domain(const std::string& text, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == text) return static_cast<int>(i);
  try {
    std::size_t used = 0;
    const int d = std::stoi(text, &used);
    if (used == text.size() && d >= 0 && (names.empty() || d < static_cast<int>(names.size()))) return d;
  } catch (const std::exception&) {
  }
  throw UsageError("--domain: '" + text + "' is not a domain of this dataset");
}

Prediction to_prediction(SegmentationResult r) {
  Prediction p;
  p.mask = std::move(r.final_mask);
  for (auto& c : r.objects) p.objects.push_back(std::move(c.mask));
  return p;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FilesystemError("cannot write", path);
  f << text;
  if (!f) throw FilesystemError("write failed", path);
}

// --- gen-data ---

struct GenDataArgs {
  std::string out_dir;
  std::uint64_t seed = 1;
  bool scarce = false;
  ConfigOptions config;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  RunConfig rc = a.config.load();
  if (a.scarce) {
    if (rc.data.domains.size() < 3) throw ConfigError("data.domains: --scarce needs at least 3 domains");
    rc.data.domains[2].n_train = DatasetConfig::scarce_config().domains[2].n_train;
  }
  const Manifest m = generate_dataset(rc.data, a.seed, a.out_dir);
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %-14s %8s %8s\n", "Domain", "Family", "Train", "Test");
  out << line;
  long tr = 0, te = 0;
  for (std::size_t d = 0; d < m.domain_names.size(); ++d) {
    std::snprintf(line, sizeof line, "%-14s %-14s %8d %8d\n", m.domain_names[d].c_str(), m.domain_families[d].c_str(),
                  m.n_train[d], m.n_test[d]);
    out << line;
    tr += m.n_train[d];
    te += m.n_test[d];
  }
  std::snprintf(line, sizeof line, "%-14s %-14s %8ld %8ld\n", "Total", "", tr, te);
  out << line;
  out << "manifest: " << (std::filesystem::path(a.out_dir) / "manifest.json").string() << "\n";
  return kExitOk;
}

// --- train ---

struct TrainArgs {
  std::string data_dir, out, stats, variant, domain;
  std::int64_t seed = -1;
  int epochs = -1;
  int crops = 0;
  bool quiet = false;
  ConfigOptions config;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = a.config.load();
  if (a.seed >= 0) rc.train.rng_seed = static_cast<std::uint64_t>(a.seed);
  if (a.epochs >= 0) rc.train.epochs = a.epochs;
  rc.validate();
  const Variant variant = parse_variant(a.variant);
  if (variant == Variant::SD && a.domain.empty()) throw UsageError("--domain is required for --variant sd");
  if (variant != Variant::SD && !a.domain.empty()) throw UsageError("--domain is only valid with --variant sd");

  Dataset ds = load_dataset(a.data_dir, Split::Train);
  if (variant == Variant::SD) ds = ds.select_domain(resolve_domain(a.domain, ds.domain_names));
  if (a.crops > 0) {
    CropSamplingConfig cc = rc.crops;
    cc.resolution = rc.train.working_resolution;
    ds = make_crop_dataset(ds, cc, a.crops, rc.train.rng_seed);
  }

  ModelParams params = build_model(variant, ds.num_domains(), ArchPreset::by_name(rc.train.preset),
                                   rc.train.rng_seed, rc.train.working_resolution);
  const std::string stats_path = a.stats.empty() ? a.out + ".csv" : a.stats;
  std::ofstream csv(stats_path, std::ios::binary);
  if (!csv) throw FilesystemError("cannot write", stats_path);
  csv << "epoch,domain,images,mean_fidelity\n";
  if (!a.quiet) {
    out << "training " << to_string(variant) << " model: " << params.parameter_count() << " parameters, "
        << ds.total() << " images, " << rc.train.epochs << " epochs\n";
  }
  train(params, ds, rc.train, [&](const EpochStats& e, const ModelParams&) {
    for (std::size_t d = 0; d < e.mean_fidelity.size(); ++d) {
      char row[160];
      std::snprintf(row, sizeof row, "%d,%s,%zu,%.9g\n", e.epoch, ds.domain_names[d].c_str(), e.images[d],
                    e.mean_fidelity[d]);
      csv << row;
    }
    if (!a.quiet) {
      out << "epoch " << e.epoch << ":";
      for (std::size_t d = 0; d < e.mean_fidelity.size(); ++d) out << " " << ds.domain_names[d] << "=" << e.mean_fidelity[d];
      char t[32];
      std::snprintf(t, sizeof t, " (%.1f s)\n", e.seconds);
      out << t << std::flush;
    }
    return true;
  });
  csv.close();
  if (!csv) throw FilesystemError("write failed", stats_path);
  save_checkpoint(params, a.out);
  out << "checkpoint: " << a.out << "\nstats: " << stats_path << "\n";
  return kExitOk;
}

// --- eval ---

struct EvalArgs {
  std::string data_dir, checkpoint, refine_checkpoint, domain, report, split = "test";
  bool refine = false, oracle = false;
  ConfigOptions config;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const RunConfig rc = a.config.load();
  if (a.oracle == !a.checkpoint.empty()) throw UsageError("exactly one of --checkpoint and --oracle is required");
  if (!a.refine_checkpoint.empty() && !a.refine) throw UsageError("--refine-checkpoint requires --refine");
  if (a.split != "test" && a.split != "train") throw UsageError("--split must be 'test' or 'train'");

  Dataset ds = load_dataset(a.data_dir, a.split == "test" ? Split::Test : Split::Train);
  int offset = 0;
  if (!a.domain.empty()) {
    offset = resolve_domain(a.domain, ds.domain_names);
    ds = ds.select_domain(offset);
  }

  Segmenter seg;
  std::string title;
  ModelParams base, refiner;
  std::vector<int> iterations(ds.total(), 0);
  if (a.oracle) {
    title = "method: oracle";
    seg = [](const ImageSample& s) {
      Prediction p;
      p.mask = s.mask;
      for (auto& c : extract_components(s.mask, 1)) p.objects.push_back(std::move(c.mask));
      return p;
    };
  } else {
    base = load_checkpoint(a.checkpoint);
    refiner = a.refine_checkpoint.empty() ? base : load_checkpoint(a.refine_checkpoint);
    // A single-domain checkpoint can score one selected domain; otherwise counts must agree.
    const int head_offset = base.num_domains == 1 ? 0 : offset;
    const int needed = base.num_domains == 1 ? 1 : (a.domain.empty() ? ds.num_domains() : offset + 1);
    if ((base.num_domains == 1 && ds.num_domains() != 1) ||
        (base.num_domains > 1 && a.domain.empty() && base.num_domains != ds.num_domains()) ||
        (base.num_domains > 1 && needed > base.num_domains)) {
      throw ConfigError("checkpoint has " + std::to_string(base.num_domains) + " domain(s), dataset has " +
                        std::to_string(ds.num_domains()) + (a.domain.empty() ? "; select one with --domain" : ""));
    }
    if (refiner.num_domains != base.num_domains) {
      throw ConfigError("refinement checkpoint has " + std::to_string(refiner.num_domains) +
                        " domain(s), base checkpoint has " + std::to_string(base.num_domains));
    }
    title = "method: " + to_string(base.variant) + (a.refine ? " + refine" : "");
    const RefineConfig rcfg = rc.refine;
    const bool refine = a.refine;
    seg = [&, head_offset, rcfg, refine](const ImageSample& s) {
      const int head = head_offset + s.domain;
      return to_prediction(refine ? refine_iterate(base, refiner, head, s.image, rcfg)
                                  : segment_once(base, head, s.image, rcfg));
    };
  }
  const EvalReport report = evaluate_dataset(seg, ds);
  const std::string text = report.to_text(title);
  out << text;
  if (!a.report.empty()) {
    write_text(a.report + ".txt", text);
    write_text(a.report + ".json", report.to_json());
    out << "report: " << a.report << ".txt, " << a.report << ".json\n";
  }
  return kExitOk;
}

// --- infer ---

struct InferArgs {
  std::string checkpoint, refine_checkpoint, image, out, overlay;
  int domain = 0;
  bool refine = false;
  ConfigOptions config;
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  const RunConfig rc = a.config.load();
  if (!a.refine_checkpoint.empty() && !a.refine) throw UsageError("--refine-checkpoint requires --refine");
  auto t0 = Clock::now();
  const ModelParams base = load_checkpoint(a.checkpoint);
  const ModelParams refiner = a.refine_checkpoint.empty() ? base : load_checkpoint(a.refine_checkpoint);
  const GrayImage gray = read_pgm(a.image);
  const Tensor<float> image = from_gray(gray);
  const double load_ms = ms_since(t0);

  t0 = Clock::now();
  const SegmentationResult r = a.refine ? refine_iterate(base, refiner, a.domain, image, rc.refine)
                                        : segment_once(base, a.domain, image, rc.refine);
  const double seg_ms = ms_since(t0);

  t0 = Clock::now();
  write_pgm(a.out, mask_to_gray(r.final_mask));
  if (!a.overlay.empty()) {
    GrayImage ov = gray;
    for (auto [y, x] : boundary_points(r.final_mask)) ov.pixels[static_cast<std::size_t>(y) * ov.width + x] = 255;
    write_pgm(a.overlay, ov);
  }
  const double write_ms = ms_since(t0);

  char line[200];
  std::snprintf(line, sizeof line, "image: %dx%d  objects: %zu  foreground: %zu px  iterations: %d\n", gray.width,
                gray.height, r.objects.size(), r.final_mask.count(), r.iterations);
  out << line;
  if (!r.dice_trace.empty()) {
    out << "dice trace:";
    for (double d : r.dice_trace) {
      std::snprintf(line, sizeof line, " %.4f", d);
      out << line;
    }
    out << "\n";
  }
  std::snprintf(line, sizeof line, "timing: load %.1f ms, segment %.1f ms, write %.1f ms\n", load_ms, seg_ms,
                write_ms);
  out << line;
  return kExitOk;
}

// --- grad-check ---

struct GradCheckArgs {
  std::uint64_t seed = 1;
  int seeds = 5;
  double tolerance = 1e-3;
  std::string preset = "default";
};

int cmd_grad_check(const GradCheckArgs& a, std::ostream& out) {
  if (a.seeds < 1) throw UsageError("--seeds must be >= 1");
  const auto reports = grad_check_suite(ArchPreset::by_name(a.preset), a.seed, a.seeds, a.tolerance);
  std::vector<std::string> failing;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    out << describe(reports[i]) << "\n";
    if (!reports[i].pass) failing.push_back(describe(reports[i]));
  }
  if (failing.empty()) {
    out << "grad-check: all " << reports.size() << " checks passed\n";
    return kExitOk;
  }
  out << "grad-check: " << failing.size() << " of " << reports.size() << " checks failed:\n";
  for (const auto& f : failing) out << "  " << f << "\n";
  return kExitFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-domain FCN segmentation on synthetic ultrasound phantoms", "mdseg"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  g->add_option("--out", gen.out_dir, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Generation seed");
  g->add_flag("--scarce", gen.scarce, "Use 20 training images in the third domain");
  gen.config.add(g);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--data", tr.data_dir, "Dataset directory")->required();
  t->add_option("--variant", tr.variant, "md, sd or ml")->required()->check(CLI::IsMember({"md", "sd", "ml"}));
  t->add_option("--domain", tr.domain, "Domain name or index (sd only)");
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--stats", tr.stats, "Per-epoch CSV (default <out>.csv)");
  t->add_option("--seed", tr.seed, "Overrides train.rng_seed")->check(CLI::NonNegativeNumber);
  t->add_option("--epochs", tr.epochs, "Overrides train.epochs")->check(CLI::NonNegativeNumber);
  t->add_option("--crops", tr.crops, "Train on N context crops per image (refinement model)")
      ->check(CLI::NonNegativeNumber);
  t->add_flag("--quiet", tr.quiet, "Only print output paths");
  tr.config.add(t);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate on a dataset split");
  e->add_option("--data", ev.data_dir, "Dataset directory")->required();
  e->add_option("--checkpoint", ev.checkpoint, "Model checkpoint");
  e->add_flag("--oracle", ev.oracle, "Predict the ground truth (harness check)");
  e->add_flag("--refine", ev.refine, "Iterative crop-and-resegment refinement");
  e->add_option("--refine-checkpoint", ev.refine_checkpoint, "Separate model for refinement passes");
  e->add_option("--domain", ev.domain, "Evaluate one domain (name or index)");
  e->add_option("--split", ev.split, "test or train");
  e->add_option("--report", ev.report, "Write <report>.txt and <report>.json");
  ev.config.add(e);

  InferArgs in;
  auto* i = app.add_subcommand("infer", "Segment one PGM image");
  i->add_option("--checkpoint", in.checkpoint, "Model checkpoint")->required();
  i->add_option("--image", in.image, "Input P5 PGM")->required();
  i->add_option("--domain", in.domain, "Domain index")->check(CLI::NonNegativeNumber);
  i->add_option("--out", in.out, "Output mask PGM")->required();
  i->add_option("--overlay", in.overlay, "Boundary overlay PGM");
  i->add_flag("--refine", in.refine, "Iterative refinement");
  i->add_option("--refine-checkpoint", in.refine_checkpoint, "Separate model for refinement passes");
  in.config.add(i);

  GradCheckArgs gc;
  auto* c = app.add_subcommand("grad-check", "Finite-difference check of every preset layer");
  c->add_option("--seed", gc.seed, "First seed");
  c->add_option("--seeds", gc.seeds, "Number of seeds");
  c->add_option("--tolerance", gc.tolerance, "Maximum relative error");
  c->add_option("--preset", gc.preset, "Architecture preset")->check(CLI::IsMember({"default", "tiny"}));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    return app.exit(pe, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*g) return cmd_gen_data(gen, out);
    if (*t) return cmd_train(tr, out);
    if (*e) return cmd_eval(ev, out);
    if (*i) return cmd_infer(in, out);
    if (*c) return cmd_grad_check(gc, out);
  } catch (const UsageError& ue) {
    err << "usage error: " << ue.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace mdseg
