// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>

#include "bdmae/attacksim.hpp"
#include "bdmae/oracles.hpp"
#include "bdmae/restore.hpp"
#include "bdmae/trigger.hpp"

namespace bdmae {

/// Configuration file present but invalid.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a command needs. JSON schema (every key optional, unknown keys
/// rejected):
///
///   {
///     "seed": 0, "jobs": 1, "oracle_timeout_ms": 30000,
///     "classifier": "builtin:backdoored", "restorer": "builtin:laplace",
///     "num_classes": 5,
///     "scoregen": {"outer_rounds": 5, "inner_masks": 5, "masked_count": 147},
///     "ssim": {"window": 11, "sigma": 1.5, "c1": 1e-4, "c2": 9e-4},
///     "refine": {"steps": 10, "beta0": 0.05, "adjacency_bonus": 0.5,
///                "image_threshold": 0.2},
///     "restore": {"thresholds": [0.6, 0.55, 0.5, 0.45, 0.4], "step": 0.05,
///                 "coverage_cap": 0.25},
///     "laplace": {"max_iters": 500, "tol": 1e-4},
///     "corpus": {"n_per_class": 20, "image_size": 64},
///     "trigger": {"pattern": "solid-patch", "tokens": 2, "size": 9,
///                 "thickness": 1, "cell": 1, "color": [1, 0, 1],
///                 "color2": [0, 0, 0], "placement": "random" | {"row": 0, "col": 0},
///                 "target": 0, "curve_seed": 0}
///   }
///
/// A trigger's "tokens" sets its side to the pixel equivalent of that many
/// tokens at the corpus image size and wins over "size". The trigger drives
/// both corpus generation and builtin:backdoored.
struct CliConfig {
  DefenseConfig defense{};
  int laplace_max_iters = 500;
  double laplace_tol = 1e-4;
  int num_classes = 5;
  CorpusOptions corpus{};
  TriggerSpec trigger = default_trigger();
  std::string classifier = "builtin:backdoored";
  std::string restorer = "builtin:laplace";
  std::uint64_t seed = 0;
  int jobs = 1;
  int oracle_timeout_ms = 30000;

  /// 2x2-token magenta patch at a random position, target class 0.
  static TriggerSpec default_trigger();
  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
};

/// Overlays the keys present in `json_text` onto `base`. Throws ConfigError.
CliConfig apply_config_json(CliConfig base, std::string_view json_text);

/// Reads and overlays a config file. Throws IoError if unreadable.
CliConfig load_config(const std::filesystem::path& path, CliConfig base = {});

/// Full effective configuration in the file schema (trigger size in pixels).
std::string config_to_json(const CliConfig& config);

struct Oracles {
  std::shared_ptr<const Classifier> classifier;
  std::shared_ptr<const Restorer> restorer;
};

/// Classifier and restorer named by the config. Specs naming the same
/// external endpoint share one connection. Throws OracleError if an external
/// endpoint cannot be reached.
Oracles make_oracles(const CliConfig& config);

}  // namespace bdmae
