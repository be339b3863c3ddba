// Acceptance suite: one PASS/FAIL line per criterion. Exit status 0 iff all pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mdseg/checkpoint.hpp"
#include "mdseg/commands.hpp"
#include "mdseg/metrics.hpp"
#include "mdseg/model.hpp"
#include "mdseg/phantom.hpp"
#include "mdseg/refine.hpp"
#include "oracles.hpp"

using namespace mdseg;
namespace fs = std::filesystem;

namespace {

// Pinned thresholds.
constexpr double kGradTolerance = 1e-3;
constexpr int kGradSeeds = 5;
constexpr double kGradBudgetSeconds = 60.0;
constexpr int kMetricPairs = 1000;
constexpr int kMetricMaxExtent = 16;
constexpr double kHausdorffTolerance = 1e-9;
constexpr double kIdentityTolerance = 1e-12;
constexpr double kTrainDiceFloor = 0.85;
constexpr int kTrainMaxEpochs = 20;
constexpr double kTrainBudgetSeconds = 30 * 60.0;
constexpr int kScarceSeeds = 3;
constexpr int kScarceMdEpochs = 5;
constexpr int kRefineEpochs = 3;
constexpr int kRefineCropsPerImage = 1;
constexpr double kRefineSlack = 0.005;
constexpr int kRefineMaxIterations = 5;
constexpr int kRoundTripInputs = 10;
constexpr int kInferenceExtent = 480;
constexpr double kInferenceBudgetSeconds = 2.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const Outcome& o, double seconds) {
  std::printf("%s  criterion %2d  %-34s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), seconds);
  std::fflush(stdout);
  failures += !o.pass;
}

void run(int id, const char* name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  report(id, name, o, seconds_since(t0));
}

std::string fmt(const char* f, double a) {
  char b[64];
  std::snprintf(b, sizeof b, f, a);
  return b;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::vector<double> mean_test_dice(const ModelParams& m, const Dataset& test) {
  std::vector<double> out;
  for (int d = 0; d < test.num_domains(); ++d) {
    double s = 0;
    for (const auto& smp : test.samples[d]) s += dice(segment_once(m, d, smp.image).final_mask, smp.mask);
    out.push_back(s / static_cast<double>(test.count(d)));
  }
  return out;
}

// --- 1 ---
Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  const auto reports = grad_check_suite(ArchPreset::default_preset(), 0, kGradSeeds, kGradTolerance);
  double worst = 0;
  int failed = 0;
  for (const auto& r : reports) {
    worst = std::max(worst, r.max_rel_error);
    failed += !r.pass;
  }
  const double t = seconds_since(t0);
  return {failed == 0 && t < kGradBudgetSeconds,
          std::to_string(reports.size()) + " layer checks over " + std::to_string(kGradSeeds) +
              " seeds, max rel err " + fmt("%.2e", worst) + ", " + std::to_string(failed) + " failed, " +
              fmt("%.1f s", t)};
}

// --- 2 ---
Outcome metric_oracles() {
  std::mt19937_64 rng(2024);
  int mismatches = 0;
  double worst_hd = 0, worst_id = 0;
  for (int t = 0; t < kMetricPairs; ++t) {
    const int h = 1 + static_cast<int>(rng() % kMetricMaxExtent), w = 1 + static_cast<int>(rng() % kMetricMaxExtent);
    const double p = std::uniform_real_distribution<double>(0.05, 0.7)(rng);
    auto a = oracle::random_mask(rng, h, w, p), b = oracle::random_mask(rng, h, w, p);
    if (b.empty_foreground()) b(static_cast<int>(rng() % h), static_cast<int>(rng() % w)) = 1;
    const double d = dice(a, b), j = jaccard(a, b);
    mismatches += d != oracle::dice(a, b);
    mismatches += j != oracle::jaccard(a, b);
    worst_hd = std::max(worst_hd, std::abs(hausdorff(a, b) - oracle::hausdorff(a, b)));
    worst_id = std::max(worst_id, std::abs(j - d / (2.0 - d)));
  }
  return {mismatches == 0 && worst_hd <= kHausdorffTolerance && worst_id <= kIdentityTolerance,
          std::to_string(kMetricPairs) + " pairs: " + std::to_string(mismatches) +
              " dice/jaccard mismatches, max |dH| " + fmt("%.1e", worst_hd) + ", max |J-D/(2-D)| " +
              fmt("%.1e", worst_id)};
}

// --- 3 ---
Outcome detection_rule() {
  // Every pair of non-empty masks on a 1x8 strip; a pair matches iff 2|A n B| >= |A u B|.
  constexpr int n = 8;
  int cases = 0, boundary = 0, wrong = 0;
  for (unsigned pm = 1; pm < (1u << n); ++pm)
    for (unsigned gm = 1; gm < (1u << n); ++gm) {
      Mask p(1, n), g(1, n);
      for (int i = 0; i < n; ++i) {
        p.data[i] = (pm >> i) & 1u;
        g.data[i] = (gm >> i) & 1u;
      }
      const int inter = __builtin_popcount(pm & gm), uni = __builtin_popcount(pm | gm);
      const bool expect = 2 * inter >= uni;
      boundary += 2 * inter == uni;
      const auto c = match_detections({p}, {g});
      wrong += (c.tp == 1) != expect || c.tp + c.fp != 1 || c.tp + c.fn != 1;
      ++cases;
    }
  return {wrong == 0 && boundary > 0, std::to_string(cases) + " strip pairs (" + std::to_string(boundary) +
                                          " with J = 0.5 exactly), " + std::to_string(wrong) + " misclassified"};
}

// --- 4 ---
struct TrainedDefault {
  ModelParams model;
  Dataset train, test;
  bool ready = false;
};

Outcome training_sanity(TrainedDefault& out) {
  const auto cfg = DatasetConfig::default_config();
  out.train = generate_split(cfg, 1, Split::Train);
  out.test = generate_split(cfg, 1, Split::Test);
  out.model = build_model(Variant::MD, 3, ArchPreset::default_preset(), 1, 64);
  TrainConfig tc;
  tc.epochs = kTrainMaxEpochs;
  tc.working_resolution = 64;
  std::vector<double> dices;
  int epochs = 0;
  const auto t0 = Clock::now();
  train(out.model, out.train, tc, [&](const EpochStats& e, const ModelParams& m) {
    epochs = e.epoch;
    dices = mean_test_dice(m, out.test);
    return !std::all_of(dices.begin(), dices.end(), [](double d) { return d >= kTrainDiceFloor; });
  });
  const double t = seconds_since(t0);
  out.ready = true;
  const bool ok = std::all_of(dices.begin(), dices.end(), [](double d) { return d >= kTrainDiceFloor; });
  std::string detail = "test Dice";
  for (int d = 0; d < 3; ++d) detail += " " + out.test.domain_names[d] + "=" + fmt("%.3f", dices[d]);
  detail += " after " + std::to_string(epochs) + " epoch(s), " + fmt("%.0f s", t);
  return {ok && epochs <= kTrainMaxEpochs && t < kTrainBudgetSeconds, detail};
}

// --- 5 ---
Outcome multi_domain_benefit() {
  double md_dice = 0, sd_dice = 0, md_hd = 0, sd_hd = 0;
  std::string per_seed;
  for (int s = 1; s <= kScarceSeeds; ++s) {
    const auto cfg = DatasetConfig::scarce_config();
    const Dataset tr = generate_split(cfg, static_cast<std::uint64_t>(s), Split::Train);
    const Dataset test = generate_split(cfg, static_cast<std::uint64_t>(s), Split::Test);
    const int scarce = 2;
    TrainConfig tc;
    tc.rng_seed = static_cast<std::uint64_t>(s);
    tc.working_resolution = 64;
    tc.epochs = kScarceMdEpochs;
    auto md = build_model(Variant::MD, 3, ArchPreset::default_preset(), tc.rng_seed, 64);
    train(md, tr, tc);

    // SD gets as many updates on the scarce domain as the MD head received.
    const auto B = static_cast<std::size_t>(tc.batch_size);
    std::size_t rounds = 0;
    for (int d = 0; d < 3; ++d) rounds = std::max(rounds, (tr.count(d) + B - 1) / B);
    const std::size_t sd_batches = (tr.count(scarce) + B - 1) / B;
    TrainConfig sc = tc;
    sc.epochs = static_cast<int>(kScarceMdEpochs * rounds / sd_batches);
    auto sd = build_model(Variant::SD, 1, ArchPreset::default_preset(), tc.rng_seed, 64);
    train(sd, tr.select_domain(scarce), sc);

    double a = 0, b = 0, ha = 0, hb = 0;
    for (const auto& smp : test.samples[scarce]) {
      const auto pm = segment_once(md, scarce, smp.image).final_mask;
      const auto ps = segment_once(sd, 0, smp.image).final_mask;
      a += dice(pm, smp.mask);
      b += dice(ps, smp.mask);
      ha += hausdorff(pm, smp.mask);
      hb += hausdorff(ps, smp.mask);
    }
    const double n = static_cast<double>(test.count(scarce));
    md_dice += a / n;
    sd_dice += b / n;
    md_hd += ha / n;
    sd_hd += hb / n;
    per_seed += " s" + std::to_string(s) + ":" + fmt("%.3f", a / n) + "/" + fmt("%.3f", b / n);
  }
  md_dice /= kScarceSeeds;
  sd_dice /= kScarceSeeds;
  md_hd /= kScarceSeeds;
  sd_hd /= kScarceSeeds;
  return {md_dice > sd_dice && md_hd < sd_hd,
          "scarce-domain Dice MD " + fmt("%.3f", md_dice) + " vs SD " + fmt("%.3f", sd_dice) + ", Hausdorff MD " +
              fmt("%.2f", md_hd) + " vs SD " + fmt("%.2f", sd_hd) + " px (MD/SD per seed:" + per_seed + ")"};
}

// --- 6 ---
Outcome refinement(const TrainedDefault& base) {
  if (!base.ready) return {false, "needs the criterion 4 model"};
  CropSamplingConfig cc;
  cc.resolution = 64;
  const Dataset crops = make_crop_dataset(base.train, cc, kRefineCropsPerImage, 1);
  TrainConfig tc;
  tc.epochs = kRefineEpochs;
  tc.working_resolution = 64;
  auto refiner = build_model(Variant::MD, 3, ArchPreset::default_preset(), 2, 64);
  train(refiner, crops, tc);

  RefineConfig rc;
  bool ok = true;
  int max_iter = 0, bad_trace = 0;
  std::string detail = "mean Dice single/refined:";
  double all_single = 0, all_refined = 0;
  for (int d = 0; d < base.test.num_domains(); ++d) {
    double s = 0, r = 0;
    for (const auto& smp : base.test.samples[d]) {
      s += dice(segment_once(base.model, d, smp.image, rc).final_mask, smp.mask);
      const auto res = refine_iterate(base.model, refiner, d, smp.image, rc);
      r += dice(res.final_mask, smp.mask);
      max_iter = std::max(max_iter, res.iterations);
      bad_trace += res.iterations < 1 || res.iterations > kRefineMaxIterations ||
                   res.dice_trace.size() != static_cast<std::size_t>(res.iterations - 1);
    }
    const double n = static_cast<double>(base.test.count(d));
    ok = ok && r / n >= s / n - kRefineSlack;
    all_single += s / n;
    all_refined += r / n;
    detail += " " + base.test.domain_names[d] + " " + fmt("%.3f", s / n) + "/" + fmt("%.3f", r / n);
  }
  detail += ", max iterations " + std::to_string(max_iter);
  return {ok && bad_trace == 0 && all_refined >= all_single - kRefineSlack * base.test.num_domains(), detail};
}

// --- 7 ---
Outcome head_isolation(const TrainedDefault& base) {
  auto m = build_model(Variant::MD, 3, ArchPreset::default_preset(), 5, 64);
  const auto before = encode_checkpoint(m);
  Batch b;
  b.domain = 0;
  for (int i = 0; i < 8; ++i) {
    const auto& s = base.ready ? base.train.samples[0][i] : generate_split(DatasetConfig::default_config(), 1, Split::Test).samples[0][i];
    b.images.push_back(s.image);
    b.labels.push_back(s.mask);
  }
  TrainConfig tc;
  tc.working_resolution = 64;
  auto st = SgdState::zeros_like(m);
  sgd_step(m, st, b, tc);
  const auto after = encode_checkpoint(m);
  std::size_t head_bytes = 0;
  for (const auto& l : m.heads[0]) head_bytes += 4 * (l.weights.size() + l.bias.size());
  const std::size_t end = before.size() - 4;
  auto region_equal = [&](std::size_t lo, std::size_t hi) {
    return std::memcmp(before.data() + lo, after.data() + lo, hi - lo) == 0;
  };
  const bool h1 = region_equal(end - 2 * head_bytes, end - head_bytes);
  const bool h2 = region_equal(end - head_bytes, end);
  const bool h0 = region_equal(end - 3 * head_bytes, end - 2 * head_bytes);
  return {before.size() == after.size() && h1 && h2 && !h0,
          std::string("head 1 ") + (h1 ? "identical" : "CHANGED") + ", head 2 " + (h2 ? "identical" : "CHANGED") +
              ", head 0 " + (h0 ? "unchanged (unexpected)" : "updated")};
}

// --- 8 ---
Outcome determinism() {
  const auto root = fs::temp_directory_path() / "mdseg_acceptance_determinism";
  fs::remove_all(root);
  const std::vector<std::string> sets = {
      "--set", "data.domains.0.n_train=24", "data.domains.0.n_test=8", "data.domains.1.n_train=24",
      "data.domains.1.n_test=8", "data.domains.2.n_train=24", "data.domains.2.n_test=8"};
  auto pipeline = [&](const std::string& tag, const char* threads) {
    setenv("MDSEG_THREADS", threads, 1);
    const auto dir = root / tag;
    std::ostringstream out, err;
    auto with = [&](std::vector<std::string> a) {
      a.insert(a.end(), sets.begin(), sets.end());
      return a;
    };
    int rc = run_cli(with({"gen-data", "--out", (dir / "data").string(), "--seed", "3"}), out, err);
    rc |= run_cli(with({"train", "--data", (dir / "data").string(), "--variant", "md", "--out",
                        (dir / "m.ckpt").string(), "--epochs", "2", "--quiet"}),
                  out, err);
    rc |= run_cli(with({"eval", "--data", (dir / "data").string(), "--checkpoint", (dir / "m.ckpt").string(),
                        "--refine", "--report", (dir / "report").string()}),
                  out, err);
    return rc;
  };
  const int ra = pipeline("a", "1");
  const int rb = pipeline("b", "4");
  unsetenv("MDSEG_THREADS");
  if (ra != 0 || rb != 0) return {false, "pipeline failed"};
  int files = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    differing += slurp(e.path()) != slurp(root / "b" / fs::relative(e.path(), root / "a"));
  }
  fs::remove_all(root);
  return {differing == 0 && files > 0,
          std::to_string(files) + " files (data, checkpoint, CSV, reports) compared across MDSEG_THREADS=1/4, " +
              std::to_string(differing) + " differ"};
}

// --- 9 ---
Outcome checkpoint_round_trip(const TrainedDefault& base) {
  const auto m = base.ready ? base.model : build_model(Variant::MD, 3, ArchPreset::default_preset(), 9, 64);
  const auto path = fs::temp_directory_path() / "mdseg_acceptance.ckpt";
  save_checkpoint(m, path.string());
  const auto loaded = load_checkpoint(path.string());
  fs::remove(path);
  std::mt19937_64 rng(77);
  int identical = 0;
  for (int i = 0; i < kRoundTripInputs; ++i) {
    const auto img = oracle::random_tensor(rng, {1, 64, 64}, 0, 1).cast<float>();
    const int d = i % 3;
    const auto a = forward(m, d, img), b = forward(loaded, d, img);
    identical += a.size() == b.size() && std::memcmp(a.storage().data(), b.storage().data(), a.size() * 4) == 0;
  }
  return {identical == kRoundTripInputs,
          std::to_string(identical) + "/" + std::to_string(kRoundTripInputs) + " forward outputs bit-identical"};
}

// --- 10 ---
Outcome inference_budget(const TrainedDefault& base) {
  setenv("MDSEG_THREADS", "1", 1);
  auto m = base.ready ? base.model : build_model(Variant::MD, 3, ArchPreset::default_preset(), 9, 64);
  m.working_resolution = kInferenceExtent;  // run the network at full resolution
  std::mt19937_64 rng(5);
  const auto img = oracle::random_tensor(rng, {1, kInferenceExtent, kInferenceExtent}, 0, 1).cast<float>();
  const auto t0 = Clock::now();
  const auto r = segment_once(m, 0, img);
  const double t = seconds_since(t0);
  unsetenv("MDSEG_THREADS");
  return {t < kInferenceBudgetSeconds && r.final_mask.height == kInferenceExtent,
          "480x480 single pass at working resolution 480, one thread: " + fmt("%.3f s", t)};
}

}  // namespace

int main() {
  std::printf("mdseg acceptance suite\n");
  TrainedDefault trained;
  run(1, "gradient correctness", gradient_correctness);
  run(2, "metric oracle equivalence", metric_oracles);
  run(3, "detection rule (J >= 0.5)", detection_rule);
  run(4, "training sanity (MD, 64x64)", [&] { return training_sanity(trained); });
  run(5, "multi-domain benefit (scarce)", multi_domain_benefit);
  run(6, "refinement non-degradation", [&] { return refinement(trained); });
  run(7, "head isolation", [&] { return head_isolation(trained); });
  run(8, "determinism across threads", determinism);
  run(9, "checkpoint round trip", [&] { return checkpoint_round_trip(trained); });
  run(10, "inference budget", [&] { return inference_budget(trained); });
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
