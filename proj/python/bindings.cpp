// SPDX-License-Identifier: Apache-2.0
// Python bindings: images are float64 arrays of shape (H, W, 3) in [0, 1],
// token masks and score maps are (14, 14) arrays.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bdmae/attacksim.hpp"
#include "bdmae/cli.hpp"
#include "bdmae/config.hpp"
#include "bdmae/external_oracle.hpp"
#include "bdmae/restore.hpp"
#include "bdmae/scoregen.hpp"
#include "bdmae/ssim.hpp"

namespace py = pybind11;
using namespace bdmae;

namespace {

using ImageArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Image to_image(const ImageArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) {
    throw py::value_error("image must have shape (H, W, 3)");
  }
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::memcpy(img.data().data(), a.data(), img.size() * sizeof(double));
  return img;
}

py::array_t<double> from_image(const Image& img) {
  py::array_t<double> a({img.height(), img.width(), 3});
  std::memcpy(a.mutable_data(), img.data().data(), img.size() * sizeof(double));
  return a;
}

py::array_t<double> from_grid(const Grid& g) {
  py::array_t<double> a({g.height(), g.width()});
  std::memcpy(a.mutable_data(), g.data().data(), g.size() * sizeof(double));
  return a;
}

py::array_t<double> from_scores(const ScoreMap& s) {
  py::array_t<double> a({kTokenGrid, kTokenGrid});
  std::memcpy(a.mutable_data(), s.values().data(), kNumTokens * sizeof(double));
  return a;
}

py::array_t<bool> from_token_mask(const TokenMask& m) {
  py::array_t<bool> a({kTokenGrid, kTokenGrid});
  auto v = a.mutable_unchecked<2>();
  for (int r = 0; r < kTokenGrid; ++r) {
    for (int c = 0; c < kTokenGrid; ++c) v(r, c) = m.test(r, c);
  }
  return a;
}

PixelMask to_pixel_mask(const MaskArray& a) {
  if (a.ndim() != 2) throw py::value_error("mask must have shape (H, W)");
  PixelMask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::memcpy(m.data().data(), a.data(), m.size());
  return m;
}

CliConfig make_config(std::uint64_t seed, const std::optional<std::string>& config_json) {
  CliConfig cfg;
  if (config_json) cfg = apply_config_json(cfg, *config_json);
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

py::dict defend_py(const ImageArray& image, std::uint64_t seed,
                   const std::optional<std::string>& config_json) {
  const Image x = to_image(image);
  const CliConfig cfg = make_config(seed, config_json);
  DefenseReport r;
  {
    py::gil_scoped_release release;
    const Oracles oracles = make_oracles(cfg);
    r = defend(x, *oracles.classifier, *oracles.restorer, cfg.defense,
               Prng(cfg.seed).fork(1).fork(0));
  }
  py::list masks;
  for (const auto& m : r.masks) masks.append(from_token_mask(m));
  py::dict out;
  out["original_label"] = r.original_label.id;
  out["purified_label"] = r.purified_label.id;
  out["purified"] = from_image(r.purified);
  out["image_score"] = from_scores(r.image_score);
  out["label_score"] = from_scores(r.label_score);
  out["image_score_refined"] = from_scores(r.image_score_refined);
  out["label_score_refined"] = from_scores(r.label_score_refined);
  out["final_score"] = from_scores(r.final_score);
  out["mean_ssim"] = from_grid(r.mean_ssim);
  out["thresholds"] = r.thresholds;
  out["masks"] = masks;
  out["classify_queries"] = r.classify_queries;
  out["restore_queries"] = r.restore_queries;
  return out;
}

py::dict corpus_py(std::uint64_t seed, const std::optional<std::string>& config_json) {
  const CliConfig cfg = make_config(seed, config_json);
  const SyntheticWorld world(cfg.num_classes);
  const TriggerSpec specs[] = {cfg.trigger};
  Dataset data;
  {
    py::gil_scoped_release release;
    data = generate_corpus(world, specs, cfg.corpus, Prng(cfg.seed).fork(0));
  }
  py::list clean, clean_labels, triggered, labels, targets;
  for (const auto& item : data.clean) {
    clean.append(from_image(item.image));
    clean_labels.append(item.label.id);
  }
  for (const auto& item : data.triggered) {
    triggered.append(from_image(item.image));
    labels.append(item.label.id);
    targets.append(item.target.id);
  }
  py::dict out;
  out["clean"] = clean;
  out["clean_labels"] = clean_labels;
  out["triggered"] = triggered;
  out["triggered_labels"] = labels;
  out["targets"] = targets;
  return out;
}

py::tuple run_cli_py(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code;
  {
    py::gil_scoped_release release;
    code = run_cli(args, out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_bdmae, m) {
  m.doc() = "Test-time blind backdoor defense engine";

  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<CoverageViolation>(m, "CoverageViolation", PyExc_RuntimeError);
  py::register_exception<OracleError>(m, "OracleError", PyExc_RuntimeError);
  py::register_exception<DefenseError>(m, "DefenseError", PyExc_RuntimeError);

  m.attr("TOKEN_GRID") = kTokenGrid;

  m.def("run_cli", &run_cli_py, py::arg("args"),
        "Run the command-line tool in-process; returns (exit_code, stdout, stderr).");

  m.def("default_config", [] { return config_to_json(CliConfig{}); },
        "Effective default configuration as JSON.");

  m.def("defend", &defend_py, py::arg("image"), py::arg("seed") = 0,
        py::arg("config_json") = py::none(),
        "Purify one image with the oracles named by the configuration.");

  m.def("generate_corpus", &corpus_py, py::arg("seed") = 0, py::arg("config_json") = py::none(),
        "Synthetic clean and triggered images, as written by gen-corpus.");

  m.def(
      "ssim_map",
      [](const ImageArray& x, const ImageArray& y) {
        return from_grid(ssim_map(to_image(x), to_image(y)));
      },
      py::arg("x"), py::arg("y"), "Per-pixel SSIM averaged over channels.");

  m.def(
      "image_score",
      [](const ImageArray& x, const ImageArray& restored) {
        return from_scores(image_score(to_image(x), to_image(restored)));
      },
      py::arg("x"), py::arg("restored"), "Token score 1 - SSIM resampled to 14x14.");

  m.def(
      "fuse_restorations",
      [](const std::vector<ImageArray>& images, const std::vector<MaskArray>& masks) {
        std::vector<Image> imgs;
        std::vector<PixelMask> ms;
        for (const auto& a : images) imgs.push_back(to_image(a));
        for (const auto& a : masks) ms.push_back(to_pixel_mask(a));
        return from_image(fuse_restorations(imgs, ms));
      },
      py::arg("images"), py::arg("masks"),
      "Per-pixel mean of the restorations whose mask covers that pixel.");
}
