// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion. Builtin oracles only.
//
//   acceptance [name-substring ...]
//
// Exit status is 0 when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "bdmae/attacksim.hpp"
#include "bdmae/cli.hpp"
#include "bdmae/oracles.hpp"
#include "bdmae/refine.hpp"
#include "bdmae/restore.hpp"
#include "bdmae/scoregen.hpp"
#include "bdmae/ssim.hpp"
#include "reference.hpp"
#include "temp_dir.hpp"

namespace {

using namespace bdmae;
using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kSeed = 7;
constexpr int kImageSize = 64;
constexpr int kPerClass = 20;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

TriggerSpec solid_tokens(double tokens) {
  TriggerSpec spec;
  spec.size = token_equivalent_size(tokens, kImageSize);
  spec.placement.random = true;
  return spec;
}

struct Run {
  Metrics before;
  Metrics after;
  double seconds = 0.0;
};

/// Corpus from Prng(seed).fork(0); image i defended with Prng(seed).fork(1).fork(i),
/// the same streams the command-line tool uses.
Run run_defense(const TriggerSpec& spec) {
  auto world = std::make_shared<const SyntheticWorld>(5);
  const TriggerSpec specs[] = {spec};
  const Prng root(kSeed);
  const Dataset data = generate_corpus(*world, specs, {kPerClass, kImageSize}, root.fork(0));
  const SyntheticBackdooredClassifier f(world, spec, spec.target);
  const LaplaceInpaintRestorer g;
  const Prng defense_root = root.fork(1);

  Run run;
  run.before = evaluate([&](const Image& x, std::size_t) { return f.classify(x); }, data);
  const auto start = Clock::now();
  run.after = evaluate(
      [&](const Image& x, std::size_t i) {
        return defend(x, f, g, DefenseConfig{}, defense_root.fork(i)).purified_label;
      },
      data, 1);
  run.seconds = seconds_since(start);
  return run;
}

Outcome end_to_end() {
  const Run r = run_defense(solid_tokens(2));
  const bool pass = r.before.asr == 1.0 && r.after.asr <= 0.05 && r.after.acc_b >= 0.90 &&
                    r.after.acc_c >= 0.98 && r.seconds <= 120.0;
  return {pass, fmt("pre ASR=%.3f; post ASR=%.3f ACC_b=%.3f ACC_c=%.3f; %zu+%zu images in %.1f s",
                    r.before.asr, r.after.asr, r.after.acc_b, r.after.acc_c, r.after.n_clean,
                    r.after.n_triggered, r.seconds)};
}

Outcome geometry_sweep() {
  struct Geometry {
    const char* name;
    TriggerSpec spec;
  };
  std::vector<Geometry> geometries;
  geometries.push_back({"1x1", solid_tokens(1)});
  geometries.push_back({"3x3", solid_tokens(3)});
  TriggerSpec curve = solid_tokens(2);
  curve.pattern = TriggerPattern::kRandomCurve;
  curve.size = 14;
  curve.thickness = 2;
  curve.curve_seed = 3;
  curve.color = {1, 1, 0};
  geometries.push_back({"random-curve", curve});
  TriggerSpec corners = solid_tokens(2);
  corners.pattern = TriggerPattern::kDistributedCheckerboards;
  corners.size = 4;
  corners.color = {1, 1, 1};
  corners.color2 = {0, 0, 0};
  geometries.push_back({"4-corner-checkerboard", corners});

  bool pass = true;
  std::string detail;
  for (const auto& g : geometries) {
    const Run r = run_defense(g.spec);
    pass = pass && r.after.asr <= 0.10 && r.before.asr == 1.0;
    detail += fmt("%s ASR %.3f->%.3f (ACC_b %.3f, %.0f s); ", g.name, r.before.asr, r.after.asr,
                  r.after.acc_b, r.seconds);
  }
  return {pass, detail};
}

/// Classifier with a pseudo-random but deterministic response to each image.
class HashClassifier : public Classifier {
 public:
  int num_classes() const override { return 3; }
  Label classify(const Image& img) const override {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < img.size(); i += 97) {
      h = (h ^ static_cast<std::uint64_t>(img.data()[i] * 1e6)) * 1099511628211ULL;
    }
    return Label{static_cast<int>(h % 3)};
  }
};

Outcome mean_preservation() {
  const HashClassifier f;
  const LaplaceInpaintRestorer g;
  Prng gen(11);
  double worst = 0.0;
  int steps = 0;
  const Image x = testing::random_image(12, 32, 32);
  while (steps < 1000) {
    ScoreMap s;
    for (double& v : s.values()) v = gen.uniform() * 3.0 - 1.0;
    const ScoreKind kind = gen.below(2) == 0 ? ScoreKind::kImage : ScoreKind::kLabel;
    if (kind == ScoreKind::kLabel) {
      for (double& v : s.values()) v = std::abs(v) * 0.2;
    }
    if (compute_refine_set(s, kind).count == 0) continue;
    RefineConfig cfg;
    cfg.steps = 1;
    cfg.beta0 = 0.01 + gen.uniform() * 0.2;
    cfg.adjacency_bonus = gen.uniform();
    const ScoreMap out = refine_scores(s, kind, x, f.classify(x), f, g, cfg, gen);
    worst = std::max(worst, std::abs(out.sum() - s.sum()));
    ++steps;
  }
  return {worst <= 1e-9, fmt("max |delta sum S| = %.3g over %d steps", worst, steps)};
}

Outcome fusion_oracle() {
  Prng gen(21);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 14 + static_cast<int>(gen.below(60));
    const int w = 14 + static_cast<int>(gen.below(60));
    const int k = 1 + static_cast<int>(gen.below(8));
    std::vector<Image> images;
    std::vector<PixelMask> masks;
    for (int i = 0; i < k; ++i) {
      images.push_back(testing::random_image(gen.next_u64(), h, w));
      masks.push_back(token_mask_to_pixel_mask(
          sample_uniform_token_mask(gen, 1 + static_cast<int>(gen.below(196))), h, w));
    }
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        bool covered = false;
        for (const auto& m : masks) covered = covered || m.at(r, c);
        if (!covered) masks[gen.below(k)].at(r, c) = 1;
      }
    }
    worst = std::max(worst, testing::max_abs_diff(fuse_restorations(images, masks),
                                                  testing::covering_mean(images, masks)));
  }
  return {worst <= 1e-12, fmt("max abs diff %.3g over 100 instances", worst)};
}

Outcome ssim_oracle() {
  double worst = 0.0, identity = 0.0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const Image x = testing::random_image(1000 + 2 * i, 32, 32);
    Image y = testing::random_image(1001 + 2 * i, 32, 32);
    const double mix = static_cast<double>(i) / 50.0;
    for (std::size_t p = 0; p < y.size(); ++p) {
      y.data()[p] = mix * x.data()[p] + (1 - mix) * y.data()[p];
    }
    worst = std::max(worst, testing::max_abs_diff(ssim_map(x, y), testing::direct_ssim(x, y)));
    const Grid self = ssim_map(x, x);
    for (double v : self.data()) identity = std::max(identity, std::abs(v - 1.0));
  }
  return {worst <= 1e-6 && identity <= 1e-12,
          fmt("max diff vs direct formula %.3g; max |ssim(x,x)-1| %.3g", worst, identity)};
}

Outcome clean_safety() {
  auto world = std::make_shared<const SyntheticWorld>(5);
  const TriggerSpec spec = solid_tokens(2);
  const TriggerSpec specs[] = {spec};
  const Prng root(kSeed);
  const Dataset data = generate_corpus(*world, specs, {kPerClass, kImageSize}, root.fork(0));
  const SyntheticCleanClassifier clean(world);
  const SyntheticBackdooredClassifier backdoored(world, spec, spec.target);
  const LaplaceInpaintRestorer g;
  const Prng defense_root = root.fork(1);

  int unchanged = 0;
  int backdoored_correct = 0;
  for (std::size_t i = 0; i < data.clean.size(); ++i) {
    const Image& x = data.clean[i].image;
    const DefenseReport a = defend(x, clean, g, DefenseConfig{}, defense_root.fork(i));
    unchanged += a.purified_label == a.original_label ? 1 : 0;
    const DefenseReport b = defend(x, backdoored, g, DefenseConfig{}, defense_root.fork(i));
    backdoored_correct += b.purified_label == data.clean[i].label ? 1 : 0;
  }
  const double acc_c = backdoored_correct / static_cast<double>(data.clean.size());
  return {unchanged >= 98 && acc_c >= 0.98,
          fmt("clean model: %d/%zu unchanged; backdoored model: ACC_c=%.3f", unchanged,
              data.clean.size(), acc_c)};
}

Outcome structural_invariants() {
  auto world = std::make_shared<const SyntheticWorld>(5);
  const TriggerSpec spec = solid_tokens(2);
  const TriggerSpec specs[] = {spec};
  const Prng root(kSeed);
  const Dataset data = generate_corpus(*world, specs, {4, kImageSize}, root.fork(0));
  const SyntheticBackdooredClassifier f(world, spec, spec.target);
  const LaplaceInpaintRestorer g;

  int nested_bad = 0, passthrough_bad = 0, budget_bad = 0, checked = 0;
  for (std::size_t i = 0; i < data.triggered.size(); ++i) {
    const auto& item = data.triggered[i];
    if (item.label == item.target) continue;  // benign: nothing for the backdoor to do
    const Image& x = item.image;
    const DefenseReport r = defend(x, f, g, DefenseConfig{}, root.fork(1).fork(i));
    ++checked;
    for (std::size_t k = 1; k < r.masks.size(); ++k) {
      nested_bad += r.masks[k - 1].subset_of(r.masks[k]) ? 0 : 1;
    }
    const PixelMask outer = token_mask_to_pixel_mask(r.masks.back(), x.height(), x.width());
    for (std::size_t p = 0; p < outer.data().size(); ++p) {
      if (outer.data()[p]) continue;
      for (int ch = 0; ch < 3; ++ch) {
        passthrough_bad += r.purified.data()[p * 3 + ch] == x.data()[p * 3 + ch] ? 0 : 1;
      }
    }
    budget_bad += (r.classify_queries == 47 && r.restore_queries == 50) ? 0 : 1;
  }

  // Refinement masks: m_r within m_rf and exactly L/2 tokens.
  Prng gen(31);
  int mask_bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    ScoreMap s;
    for (double& v : s.values()) v = gen.uniform();
    const RefineSet set = compute_refine_set(s, ScoreKind::kImage,
                                             RefineConfig{10, 0.05, 0.5, gen.uniform()});
    if (set.count < 2) continue;
    const TokenMask m = sample_topology_mask(s, set.tokens, set.count, 0.5, gen);
    mask_bad += (m.subset_of(set.tokens) && m.count() == set.count / 2) ? 0 : 1;
  }

  const bool pass = checked > 0 && nested_bad == 0 && passthrough_bad == 0 &&
                    budget_bad == 0 && mask_bad == 0;
  return {pass, fmt("%d images: nesting violations %d, pass-through mismatches %d, "
                    "budget != 47/50 on %d; refinement-mask violations %d/1000",
                    checked, nested_bad, passthrough_bad, budget_bad, mask_bad)};
}

Outcome determinism() {
  testing::TempDir dir;
  auto cli = [](std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return std::make_pair(code, out.str());
  };
  const std::string corpus = (dir / "corpus").string();
  if (cli({"gen-corpus", "--out", corpus, "--seed", "7", "--n-per-class", "2"}).first != 0) {
    return {false, "gen-corpus failed"};
  }
  const std::string manifest = corpus + "/manifest.json";
  const auto a = cli({"eval", "--manifest", manifest, "--seed", "7", "--out",
                      (dir / "a").string()});
  const auto b = cli({"eval", "--manifest", manifest, "--seed", "7", "--out",
                      (dir / "b").string()});
  if (a.first != 0 || b.first != 0) return {false, "eval failed"};
  bool same = a.second == b.second &&
              testing::slurp(dir / "a/metrics.json") == testing::slurp(dir / "b/metrics.json");
  int images = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "a/purified")) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), dir / "a");
    same = same && testing::slurp(e.path()) == testing::slurp(dir / "b" / rel.string());
    ++images;
  }
  return {same && images == 20,
          fmt("metrics and %d purified images %s", images, same ? "byte-identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"end-to-end-2x2-defense", end_to_end},
      {"trigger-geometry-sweep", geometry_sweep},
      {"refinement-mean-preservation", mean_preservation},
      {"fusion-oracle-equivalence", fusion_oracle},
      {"ssim-oracle-equivalence", ssim_oracle},
      {"clean-safety", clean_safety},
      {"structural-invariants", structural_invariants},
      {"eval-determinism", determinism},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    if (argc > 1) {
      bool selected = false;
      for (int i = 1; i < argc; ++i) selected = selected || std::string(name).find(argv[i]) != std::string::npos;
      if (!selected) continue;
    }
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
