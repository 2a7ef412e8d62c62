// SPDX-License-Identifier: Apache-2.0
#include "bdmae/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bdmae/attacksim.hpp"
#include "bdmae/config.hpp"
#include "bdmae/dataset_io.hpp"
#include "bdmae/external_oracle.hpp"
#include "bdmae/image_io.hpp"
#include "bdmae/oracles.hpp"
#include "bdmae/restore.hpp"

namespace bdmae {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

/// Ends a command with an exit code. `report` goes to stdout when set.
struct Exit {
  int code;
  std::string message;
  std::optional<ordered_json> report;
};

struct CommonFlags {
  std::string config;
  std::string classifier;
  std::string restorer;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out;
  CLI::Option* config_opt = nullptr;
  CLI::Option* classifier_opt = nullptr;
  CLI::Option* restorer_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* jobs_opt = nullptr;
};

struct CorpusFlags {
  int n_per_class = 0;
  int image_size = 0;
  std::string trigger;
  double trigger_tokens = 0;
  CLI::Option* n_opt = nullptr;
  CLI::Option* size_opt = nullptr;
  CLI::Option* trigger_opt = nullptr;
  CLI::Option* tokens_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool oracles, bool jobs) {
  f.config_opt = cmd->add_option("--config", f.config, "JSON configuration file");
  f.seed_opt = cmd->add_option("--seed", f.seed, "Root random seed");
  if (oracles) {
    f.classifier_opt = cmd->add_option(
        "--classifier", f.classifier,
        "builtin:clean | builtin:backdoored | exec:<cmd> | tcp:<host>:<port>");
    f.restorer_opt = cmd->add_option(
        "--restorer", f.restorer,
        "builtin:laplace | builtin:echo | exec:<cmd> | tcp:<host>:<port>");
  }
  if (jobs) f.jobs_opt = cmd->add_option("--jobs", f.jobs, "Worker threads");
}

void add_corpus(CLI::App* cmd, CorpusFlags& f) {
  f.n_opt = cmd->add_option("--n-per-class", f.n_per_class, "Clean images per class");
  f.size_opt = cmd->add_option("--image-size", f.image_size, "Corpus image side in pixels");
  f.trigger_opt = cmd->add_option(
      "--trigger", f.trigger,
      "solid-patch | checkerboard | random-curve | distributed-checkerboards");
  f.tokens_opt = cmd->add_option("--trigger-tokens", f.trigger_tokens,
                                 "Trigger side in token-grid cells");
}

CliConfig resolve_config(const CommonFlags& f, const CorpusFlags* corpus) {
  CliConfig cfg;
  try {
    cfg.oracle_timeout_ms = oracle_timeout_from_env();
  } catch (const InvalidArgument& e) {
    throw Exit{exit_code::kUsage, e.what(), std::nullopt};
  }
  const int env_timeout = cfg.oracle_timeout_ms;
  if (f.config_opt && f.config_opt->count() > 0) {
    try {
      cfg = load_config(f.config, cfg);
    } catch (const IoError& e) {
      throw Exit{exit_code::kUnreadableInput, e.what(), std::nullopt};
    } catch (const ConfigError& e) {
      throw Exit{exit_code::kUsage, e.what(), std::nullopt};
    }
    // An explicit environment setting beats the file.
    if (std::getenv("BDMAE_ORACLE_TIMEOUT_MS")) cfg.oracle_timeout_ms = env_timeout;
  }
  if (f.seed_opt && f.seed_opt->count() > 0) cfg.seed = f.seed;
  if (f.jobs_opt && f.jobs_opt->count() > 0) cfg.jobs = f.jobs;
  if (f.classifier_opt && f.classifier_opt->count() > 0) cfg.classifier = f.classifier;
  if (f.restorer_opt && f.restorer_opt->count() > 0) cfg.restorer = f.restorer;
  if (corpus) {
    if (corpus->n_opt->count() > 0) cfg.corpus.n_per_class = corpus->n_per_class;
    if (corpus->size_opt->count() > 0) {
      // Keep the trigger's token footprint when only the image size changes.
      if (corpus->tokens_opt->count() == 0 && cfg.trigger.size ==
                                                  CliConfig::default_trigger().size &&
          f.config_opt->count() == 0) {
        cfg.trigger.size = token_equivalent_size(2, corpus->image_size);
      }
      cfg.corpus.image_size = corpus->image_size;
    }
    if (corpus->trigger_opt->count() > 0) {
      try {
        cfg.trigger.pattern = trigger_pattern_from_string(corpus->trigger);
      } catch (const InvalidArgument& e) {
        throw Exit{exit_code::kUsage, e.what(), std::nullopt};
      }
    }
    if (corpus->tokens_opt->count() > 0) {
      if (!(corpus->trigger_tokens >= 0)) {
        throw Exit{exit_code::kUsage, "--trigger-tokens must be non-negative", std::nullopt};
      }
      cfg.trigger.size = token_equivalent_size(corpus->trigger_tokens, cfg.corpus.image_size);
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw Exit{exit_code::kUsage, e.what(), std::nullopt};
  }
  return cfg;
}

ordered_json oracle_failure(const std::string& stage, const std::string& what) {
  return ordered_json{{"schema", "bdmae-report/1"},
                      {"status", "oracle-failure"},
                      {"stage", stage},
                      {"error", what}};
}

Oracles open_oracles(const CliConfig& cfg) {
  try {
    return make_oracles(cfg);
  } catch (const OracleError& e) {
    throw Exit{exit_code::kOracleFailure, e.what(), oracle_failure("connect", e.what())};
  }
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Exit{exit_code::kCannotCreate,
               "cannot create directory '" + dir.string() + "'" +
                   (ec ? ": " + ec.message() : std::string()),
               std::nullopt};
  }
}

template <typename Fn>
void writing(Fn&& fn) {
  try {
    fn();
  } catch (const IoError& e) {
    throw Exit{exit_code::kCannotCreate, e.what(), std::nullopt};
  }
}

Image read_input_image(const std::string& path) {
  Image x;
  try {
    x = read_ppm(path);
  } catch (const IoError& e) {
    throw Exit{exit_code::kUnreadableInput, e.what(), std::nullopt};
  } catch (const FormatError& e) {
    throw Exit{exit_code::kUnreadableInput, e.what(), std::nullopt};
  }
  try {
    validate_image(x);
  } catch (const InvalidArgument& e) {
    throw Exit{exit_code::kDataError, path + ": " + e.what(), std::nullopt};
  }
  return x;
}

void check_trigger_fits(const CliConfig& cfg) {
  try {
    rasterize_trigger(cfg.trigger, cfg.corpus.image_size, cfg.corpus.image_size);
  } catch (const InvalidArgument& e) {
    throw Exit{exit_code::kDataError,
               "trigger does not fit a " + std::to_string(cfg.corpus.image_size) + "x" +
                   std::to_string(cfg.corpus.image_size) + " image: " + e.what(),
               std::nullopt};
  }
}

Grid score_grid(const ScoreMap& s) {
  Grid g(kTokenGrid, kTokenGrid);
  for (int t = 0; t < kNumTokens; ++t) g.data()[t] = s[t];
  return g;
}

/// Fraction of thresholds whose mask covers each token.
Grid mask_coverage(const std::vector<TokenMask>& masks) {
  Grid g(kTokenGrid, kTokenGrid);
  if (masks.empty()) return g;
  for (int t = 0; t < kNumTokens; ++t) {
    int n = 0;
    for (const auto& m : masks) n += m.test(t) ? 1 : 0;
    g.data()[t] = static_cast<double>(n) / static_cast<double>(masks.size());
  }
  return g;
}

ordered_json config_json(const CliConfig& cfg) {
  return ordered_json::parse(config_to_json(cfg));
}

int cmd_defend(const CommonFlags& f, const std::string& image_path, bool scores,
               std::ostream& out) {
  const CliConfig cfg = resolve_config(f, nullptr);
  const Image x = read_input_image(image_path);
  const bool to_dir = !f.out.empty();
  if (to_dir) ensure_directory(f.out);
  const Oracles oracles = open_oracles(cfg);

  DefenseReport r;
  try {
    r = defend(x, *oracles.classifier, *oracles.restorer, cfg.defense,
               Prng(cfg.seed).fork(1).fork(0));
  } catch (const DefenseError& e) {
    ordered_json diag = oracle_failure(e.stage(), e.what());
    diag["queries"] = {{"classify", e.partial().classify_queries},
                       {"restore", e.partial().restore_queries}};
    throw Exit{exit_code::kOracleFailure, e.what(), diag};
  } catch (const OracleError& e) {
    throw Exit{exit_code::kOracleFailure, e.what(), oracle_failure("defend", e.what())};
  }

  std::vector<int> mask_tokens;
  for (const auto& m : r.masks) mask_tokens.push_back(m.count());
  ordered_json report{{"schema", "bdmae-report/1"},
                      {"status", "ok"},
                      {"image", image_path},
                      {"seed", cfg.seed},
                      {"original_label", r.original_label.id},
                      {"purified_label", r.purified_label.id},
                      {"thresholds", r.thresholds},
                      {"mask_tokens", mask_tokens},
                      {"queries", {{"classify", r.classify_queries},
                                   {"restore", r.restore_queries}}}};
  ordered_json files = ordered_json::array();
  if (to_dir) {
    const fs::path dir(f.out);
    writing([&] {
      write_ppm(dir / "purified.ppm", r.purified);
      files.push_back("purified.ppm");
      if (scores) {
        const std::pair<const char*, Grid> maps[] = {
            {"si_raw.pgm", score_grid(r.image_score)},
            {"sl_raw.pgm", score_grid(r.label_score)},
            {"si_refined.pgm", score_grid(r.image_score_refined)},
            {"sl_refined.pgm", score_grid(r.label_score_refined)},
            {"s_final.pgm", score_grid(r.final_score)},
            {"ssim.pgm", r.mean_ssim},
            {"purify_mask.pgm", mask_coverage(r.masks)},
        };
        for (const auto& [name, grid] : maps) {
          write_pgm16(dir / name, grid);
          files.push_back(name);
        }
      }
    });
  }
  report["files"] = files;
  report["config"] = config_json(cfg);
  const std::string text = report.dump(2) + "\n";
  if (to_dir) writing([&] { write_file_atomic(fs::path(f.out) / "report.json", text); });
  out << text;
  return exit_code::kOk;
}

Dataset load_or_generate(const CliConfig& cfg, const std::string& manifest) {
  if (!manifest.empty()) {
    try {
      return import_dataset(manifest);
    } catch (const IoError& e) {
      throw Exit{exit_code::kUnreadableInput, e.what(), std::nullopt};
    } catch (const FormatError& e) {
      throw Exit{exit_code::kUnreadableInput, e.what(), std::nullopt};
    } catch (const DataError& e) {
      throw Exit{exit_code::kDataError, e.what(), std::nullopt};
    }
  }
  check_trigger_fits(cfg);
  const SyntheticWorld world(cfg.num_classes);
  const TriggerSpec specs[] = {cfg.trigger};
  return generate_corpus(world, specs, cfg.corpus, Prng(cfg.seed).fork(0));
}

ordered_json ratio(std::size_t num, std::size_t den) {
  if (den == 0) return nullptr;
  return static_cast<double>(num) / static_cast<double>(den);
}

int cmd_eval(const CommonFlags& f, const std::string& manifest, bool before_defense,
             const CorpusFlags& corpus, std::ostream& out) {
  const CliConfig cfg = resolve_config(f, manifest.empty() ? &corpus : nullptr);
  const Dataset data = load_or_generate(cfg, manifest);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Image& img = i < data.clean.size() ? data.clean[i].image
                                             : data.triggered[i - data.clean.size()].image;
    try {
      validate_image(img);
    } catch (const InvalidArgument& e) {
      throw Exit{exit_code::kDataError, "image " + std::to_string(i) + ": " + e.what(),
                 std::nullopt};
    }
  }
  const bool to_dir = !f.out.empty();
  if (to_dir) ensure_directory(f.out);
  const Oracles oracles = open_oracles(cfg);

  const std::size_t total = data.size();
  std::vector<long> classify_counts(total, 0);
  std::vector<Image> purified(to_dir && !before_defense ? total : 0);
  const Prng defense_root = Prng(cfg.seed).fork(1);
  const DefenseFn fn = [&](const Image& image, std::size_t i) -> Label {
    if (before_defense) {
      classify_counts[i] = 1;
      return oracles.classifier->classify(image);
    }
    DefenseReport r = defend(image, *oracles.classifier, *oracles.restorer, cfg.defense,
                             defense_root.fork(i));
    classify_counts[i] = r.classify_queries;
    if (!purified.empty()) purified[i] = std::move(r.purified);
    return r.purified_label;
  };

  std::vector<Label> predictions;
  try {
    predictions = predict_all(fn, data, cfg.jobs);
  } catch (const DefenseError& e) {
    throw Exit{exit_code::kOracleFailure, e.what(), oracle_failure(e.stage(), e.what())};
  } catch (const OracleError& e) {
    throw Exit{exit_code::kOracleFailure, e.what(), oracle_failure("classify", e.what())};
  }

  std::size_t clean_ok = 0, triggered_ok = 0, attacked = 0, hits = 0;
  const std::size_t n_clean = data.clean.size();
  for (std::size_t i = 0; i < n_clean; ++i) {
    if (predictions[i] == data.clean[i].label) ++clean_ok;
  }
  for (std::size_t j = 0; j < data.triggered.size(); ++j) {
    const auto& item = data.triggered[j];
    const Label p = predictions[n_clean + j];
    if (p == item.label) ++triggered_ok;
    if (item.label != item.target) {
      ++attacked;
      if (p == item.target) ++hits;
    }
  }
  long classify_total = 0;
  for (long c : classify_counts) classify_total += c;

  ordered_json metrics{{"acc_c", ratio(clean_ok, n_clean)},
                       {"acc_b", ratio(triggered_ok, data.triggered.size())},
                       {"asr", ratio(hits, attacked)},
                       {"n_clean", n_clean},
                       {"n_triggered", data.triggered.size()},
                       {"queries_per_image", ratio(classify_total, total)}};
  const std::string text = metrics.dump() + "\n";
  if (to_dir) {
    const fs::path dir(f.out);
    writing([&] {
      if (!purified.empty()) {
        for (const char* split : {"clean", "triggered"}) {
          ensure_directory(dir / "purified" / split);
        }
        for (std::size_t i = 0; i < total; ++i) {
          const bool clean = i < n_clean;
          char name[48];
          std::snprintf(name, sizeof name, "purified/%s/%05zu.ppm",
                        clean ? "clean" : "triggered", clean ? i : i - n_clean);
          write_ppm(dir / name, purified[i]);
        }
      }
      write_file_atomic(dir / "metrics.json", text);
    });
  }
  out << text;
  return exit_code::kOk;
}

int cmd_gen_corpus(const CommonFlags& f, const CorpusFlags& corpus, std::ostream& out) {
  const CliConfig cfg = resolve_config(f, &corpus);
  check_trigger_fits(cfg);
  ensure_directory(f.out);
  const SyntheticWorld world(cfg.num_classes);
  const TriggerSpec specs[] = {cfg.trigger};
  const Dataset data = generate_corpus(world, specs, cfg.corpus, Prng(cfg.seed).fork(0));
  writing([&] { export_dataset(f.out, data); });
  out << ordered_json{{"manifest", (fs::path(f.out) / "manifest.json").string()},
                      {"n_clean", data.clean.size()},
                      {"n_triggered", data.triggered.size()}}
             .dump()
      << "\n";
  return exit_code::kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Test-time blind backdoor defense", "bdmae"};
  app.require_subcommand(1);

  CommonFlags defend_flags;
  std::string image;
  bool scores = false;
  auto* defend_cmd = app.add_subcommand("defend", "Purify one image");
  add_common(defend_cmd, defend_flags, true, false);
  defend_cmd->add_option("--image", image, "Input image (binary PPM)")->required();
  defend_cmd->add_option("--out", defend_flags.out, "Output directory");
  defend_cmd->add_flag("--scores", scores, "Also write the seven score maps (16-bit PGM)");

  CommonFlags eval_flags;
  CorpusFlags eval_corpus;
  std::string manifest;
  bool before_defense = false;
  auto* eval_cmd = app.add_subcommand("eval", "Measure ACC_c, ACC_b and ASR on a dataset");
  add_common(eval_cmd, eval_flags, true, true);
  add_corpus(eval_cmd, eval_corpus);
  eval_cmd->add_option("--manifest", manifest,
                       "Dataset manifest; without it a corpus is generated from the config");
  eval_cmd->add_option("--out", eval_flags.out, "Directory for metrics.json and purified images");
  eval_cmd->add_flag("--before-defense", before_defense, "Classify without purification");

  CommonFlags gen_flags;
  CorpusFlags gen_corpus;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Write a synthetic dataset and manifest");
  add_common(gen_cmd, gen_flags, false, false);
  add_corpus(gen_cmd, gen_corpus);
  gen_cmd->add_option("--out", gen_flags.out, "Dataset directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_code::kOk : exit_code::kUsage;
  }

  try {
    if (defend_cmd->parsed()) return cmd_defend(defend_flags, image, scores, out);
    if (eval_cmd->parsed()) {
      return cmd_eval(eval_flags, manifest, before_defense, eval_corpus, out);
    }
    return cmd_gen_corpus(gen_flags, gen_corpus, out);
  } catch (const Exit& e) {
    if (e.report) out << e.report->dump(2) << "\n";
    err << "bdmae: " << e.message << "\n";
    return e.code;
  } catch (const InvalidArgument& e) {
    err << "bdmae: " << e.what() << "\n";
    return exit_code::kDataError;
  }
}

}  // namespace bdmae
