// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "bdmae/oracles.hpp"

namespace bdmae {

namespace {

// Multigrid solver for the discrete Laplace equation on the masked cells of a
// token-aligned grid pyramid. Level k has side 14 * 2^k and a cell is masked
// iff its token is. Unmasked cells are Dirichlet data; at the image border only
// in-image neighbours count (Neumann).
//
// Each level solves sum_n (v_n - v_p) = g_p over its masked cells. Corrections
// on coarser grids pin their zero boundary to the face shared with known
// cells (a known neighbour acts as the ghost value -e_p); solving directly on
// coarse cell centres would push the boundary outwards by half a coarse cell
// per level and the cycle diverges.
class LaplaceMultigrid {
 public:
  static constexpr int kLevels = 5;

  explicit LaplaceMultigrid(const TokenMask& mask) {
    // Token bounding box of the mask; levels >= 1 only touch cells inside it.
    int t_r0 = kTokenGrid, t_r1 = 0, t_c0 = kTokenGrid, t_c1 = 0;
    for (int r = 0; r < kTokenGrid; ++r) {
      for (int c = 0; c < kTokenGrid; ++c) {
        if (!mask.test(r, c)) continue;
        t_r0 = std::min(t_r0, r);
        t_r1 = std::max(t_r1, r + 1);
        t_c0 = std::min(t_c0, c);
        t_c1 = std::max(t_c1, c + 1);
      }
    }
    for (int k = 0; k < kLevels; ++k) {
      Level& lv = levels_[k];
      lv.n = kTokenGrid << k;
      const int n = lv.n;
      lv.box = k == 0 ? Box{0, n, 0, n} : Box{t_r0 << k, t_r1 << k, t_c0 << k, t_c1 << k};
      const std::size_t cells = static_cast<std::size_t>(n) * n;
      lv.masked.resize(cells);
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
          lv.masked[static_cast<std::size_t>(r) * n + c] = mask.test(r >> k, c >> k) ? 1.f : 0.f;
        }
      }
      auto known = [&](int r, int c) {
        return r >= 0 && r < n && c >= 0 && c < n &&
               lv.masked[static_cast<std::size_t>(r) * n + c] == 0.f;
      };
      for (int b = 0; b < 2; ++b) {
        lv.diag[b].assign(cells, 1.f);
        lv.gain[b].assign(cells, 0.f);
      }
      for (int r = lv.box.r0; r < lv.box.r1; ++r) {
        for (int c = lv.box.c0; c < lv.box.c1; ++c) {
          const std::size_t p = static_cast<std::size_t>(r) * n + c;
          const int inside = (r > 0) + (r + 1 < n) + (c > 0) + (c + 1 < n);
          const int ghosts = known(r - 1, c) + known(r + 1, c) + known(r, c - 1) +
                             known(r, c + 1);
          lv.diag[kCentres][p] = static_cast<float>(inside);
          lv.diag[kFaces][p] = static_cast<float>(inside + ghosts);
          for (int b = 0; b < 2; ++b) {
            lv.gain[b][p] = static_cast<float>(kOmega * lv.masked[p] / lv.diag[b][p]);
          }
        }
      }
      lv.e.assign(cells, 0.f);
      lv.scratch.assign(cells, 0.f);
      lv.g.assign(cells, 0.f);
      lv.zeros.assign(n, 0.f);
      lv.line.assign(n, 0.f);
      lv.expanded.assign(n, 0.f);
    }
  }

  // Iterates on u (one channel of level k, known cells fixed) until an update
  // changes no cell by `tol` or more, or `max_iters` updates have run.
  void solve(int k, std::vector<float>& u, int max_iters, double tol) {
    Level& lv = levels_[k];
    for (int it = 0; it < max_iters; ++it) {
      float change = 0.f;
      if (k == 0) {
        // Tokens are the coarsest grid: relax u itself.
        std::fill(lv.g.begin(), lv.g.end(), 0.f);
        lv.e.swap(u);
        change = relax(lv, kCentres);
        lv.e.swap(u);
      } else {
        // Correction e solves L e = -L u with e = 0 on known cells.
        const float* diag = lv.diag[kCentres].data();
        const float* m = lv.masked.data();
        float* g = lv.g.data();
        stencil(lv, u.data(), [&](std::size_t p, float sum) {
          g[p] = m[p] * (diag[p] * u[p] - sum);
        });
        std::fill(lv.e.begin(), lv.e.end(), 0.f);
        vcycle(k, kCentres);
        for (std::size_t p = 0; p < u.size(); ++p) {
          change = std::max(change, std::abs(lv.e[p]));
          u[p] += lv.e[p];
        }
      }
      if (change < tol) break;
    }
  }

  // Bilinear cell-centred upsampling of level k-1 into the masked cells of
  // level k. Each fine cell blends its nearest coarse row and column with
  // weight 3/4 and the next one with 1/4, clamped at the border.
  void prolong(int k, const float* coarse, float* fine, bool add) {
    Level& lv = levels_[k];
    const int n = lv.n;
    const int cs = levels_[k - 1].n;
    float* line = lv.line.data();
    float* x = lv.expanded.data();
    for (int r = lv.box.r0; r < lv.box.r1; ++r) {
      const int i = r / 2;
      const int far = r % 2 == 0 ? std::max(i - 1, 0) : std::min(i + 1, cs - 1);
      const float* a = coarse + static_cast<std::size_t>(i) * cs;
      const float* b = coarse + static_cast<std::size_t>(far) * cs;
      for (int j = 0; j < cs; ++j) line[j] = 0.75f * a[j] + 0.25f * b[j];
      x[0] = line[0];
      for (int j = 1; j < cs; ++j) {
        x[2 * j - 1] = 0.75f * line[j - 1] + 0.25f * line[j];
        x[2 * j] = 0.75f * line[j] + 0.25f * line[j - 1];
      }
      x[n - 1] = line[cs - 1];
      const float* m = lv.masked.data() + static_cast<std::size_t>(r) * n;
      float* out = fine + static_cast<std::size_t>(r) * n;
      if (add) {
        for (int c = 0; c < n; ++c) out[c] += m[c] * x[c];
      } else {
        for (int c = 0; c < n; ++c) out[c] += m[c] * (x[c] - out[c]);
      }
    }
  }

 private:
  static constexpr int kCentres = 0;  // Dirichlet data at known cell centres
  static constexpr int kFaces = 1;    // zero correction on the shared face
  static constexpr double kOmega = 0.8;
  static constexpr int kPreSmooth = 2;
  static constexpr int kPostSmooth = 2;
  static constexpr int kCoarsestSweeps = 60;

  struct Box {
    int r0, r1, c0, c1;  // half-open cell ranges
  };

  // Correction buffers (e, scratch) stay zero outside the box, so sweeps and
  // residuals restricted to the box see the right neighbour values.
  struct Level {
    int n = 0;
    Box box{};
    std::vector<float> masked;               // 1 on cells to solve for
    std::array<std::vector<float>, 2> diag;  // centre weight per boundary kind
    std::array<std::vector<float>, 2> gain;  // omega * masked / diag
    std::vector<float> e, scratch, g;
    std::vector<float> zeros, line, expanded;
  };

  // Calls op(p, sum of the in-image 4-neighbours of p) for every cell of the box.
  template <class Op>
  static void stencil(const Level& lv, const float* v, Op&& op) {
    const int n = lv.n;
    const Box& box = lv.box;
    for (int r = box.r0; r < box.r1; ++r) {
      const float* row = v + static_cast<std::size_t>(r) * n;
      const float* up = r > 0 ? row - n : lv.zeros.data();
      const float* down = r + 1 < n ? row + n : lv.zeros.data();
      const std::size_t base = static_cast<std::size_t>(r) * n;
      int lo = box.c0;
      int hi = box.c1;
      if (lo == 0) {
        op(base, up[0] + down[0] + row[1]);
        lo = 1;
      }
      const bool right_edge = hi == n;
      if (right_edge) hi = n - 1;
      for (int c = lo; c < hi; ++c) op(base + c, up[c] + down[c] + row[c - 1] + row[c + 1]);
      if (right_edge) op(base + n - 1, up[n - 1] + down[n - 1] + row[n - 2]);
    }
  }

  // One damped Jacobi sweep of e towards L e = g; returns the largest change.
  static float relax(Level& lv, int kind) {
    const float* e = lv.e.data();
    const float* g = lv.g.data();
    const float* diag = lv.diag[kind].data();
    const float* gain = lv.gain[kind].data();
    float* next = lv.scratch.data();
    float change = 0.f;
    stencil(lv, e, [&](std::size_t p, float sum) {
      const float delta = gain[p] * (sum - g[p] - diag[p] * e[p]);
      change = std::max(change, std::abs(delta));
      next[p] = e[p] + delta;
    });
    lv.e.swap(lv.scratch);
    return change;
  }

  static void smooth(Level& lv, int kind, int sweeps) {
    const float* g = lv.g.data();
    const float* diag = lv.diag[kind].data();
    const float* gain = lv.gain[kind].data();
    for (int s = 0; s < sweeps; ++s) {
      const float* e = lv.e.data();
      float* next = lv.scratch.data();
      stencil(lv, e, [&](std::size_t p, float sum) {
        next[p] = e[p] + gain[p] * (sum - g[p] - diag[p] * e[p]);
      });
      lv.e.swap(lv.scratch);
    }
  }

  // In-place Gauss-Seidel for the token grid, where a near-exact solve is cheap.
  static void gauss_seidel(Level& lv, int kind, int sweeps) {
    const int n = lv.n;
    const float* g = lv.g.data();
    const float* diag = lv.diag[kind].data();
    const float* m = lv.masked.data();
    float* e = lv.e.data();
    for (int s = 0; s < sweeps; ++s) {
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
          const std::size_t p = static_cast<std::size_t>(r) * n + c;
          if (m[p] == 0.f) continue;
          float sum = 0.f;
          if (r > 0) sum += e[p - n];
          if (r + 1 < n) sum += e[p + n];
          if (c > 0) sum += e[p - 1];
          if (c + 1 < n) sum += e[p + 1];
          e[p] = (sum - g[p]) / diag[p];
        }
      }
    }
  }

  void vcycle(int k, int kind) {
    Level& lv = levels_[k];
    if (k == 0) {
      gauss_seidel(lv, kind, kCoarsestSweeps);
      return;
    }
    smooth(lv, kind, kPreSmooth);

    // Residual, summed over 2x2 children into the coarse right-hand side.
    const float* e = lv.e.data();
    const float* g = lv.g.data();
    const float* diag = lv.diag[kind].data();
    const float* m = lv.masked.data();
    float* res = lv.scratch.data();
    stencil(lv, e, [&](std::size_t p, float sum) {
      res[p] = m[p] * (g[p] - sum + diag[p] * e[p]);
    });
    Level& cv = levels_[k - 1];
    const Box& box = levels_[k].box;
    for (int r = box.r0 / 2; r < box.r1 / 2; ++r) {
      const float* a = res + static_cast<std::size_t>(2 * r) * lv.n;
      const float* b = a + lv.n;
      float* gc = cv.g.data() + static_cast<std::size_t>(r) * cv.n;
      for (int c = box.c0 / 2; c < box.c1 / 2; ++c) {
        gc[c] = a[2 * c] + a[2 * c + 1] + b[2 * c] + b[2 * c + 1];
      }
    }
    std::fill(cv.e.begin(), cv.e.end(), 0.f);
    vcycle(k - 1, kFaces);
    prolong(k, cv.e.data(), lv.e.data(), true);
    smooth(lv, kind, kPostSmooth);
  }

  std::array<Level, kLevels> levels_;
};

}  // namespace

LaplaceInpaintRestorer::LaplaceInpaintRestorer(int max_iters, double tol)
    : max_iters_(max_iters), tol_(tol) {
  if (max_iters < 0) throw InvalidArgument("max_iters must be non-negative");
  if (!(tol > 0.0)) throw InvalidArgument("tol must be positive");
}

Image LaplaceInpaintRestorer::restore(const Image& image224,
                                      const TokenMask& mask) const {
  if (image224.height() != kRestorerSize || image224.width() != kRestorerSize) {
    throw InvalidArgument("restorer input must be 224x224");
  }
  if (mask.none()) return image224;
  if (mask.count() == kNumTokens) {
    // No boundary: the harmonic extension is undefined, fill with mid-grey.
    return Image(kRestorerSize, kRestorerSize, 0.5);
  }

  constexpr int kLevels = LaplaceMultigrid::kLevels;
  LaplaceMultigrid solver(mask);
  Image out = image224;
  const std::size_t pixels = image224.pixel_count();
  for (int ch = 0; ch < 3; ++ch) {
    // pyramid[k] has side 14 * 2^k and holds 2x2 box averages of level k+1.
    std::array<std::vector<float>, kLevels> pyramid;
    std::vector<float>& top = pyramid[kLevels - 1];
    top.resize(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
      top[p] = static_cast<float>(image224.data()[p * 3 + ch]);
    }
    for (int k = kLevels - 2; k >= 0; --k) {
      const int n = kTokenGrid << k;
      const std::vector<float>& up = pyramid[k + 1];
      pyramid[k].resize(static_cast<std::size_t>(n) * n);
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
          const std::size_t a = static_cast<std::size_t>(2 * r) * (2 * n) + 2 * c;
          pyramid[k][static_cast<std::size_t>(r) * n + c] =
              0.25f * (up[a] + up[a + 1] + up[a + 2 * n] + up[a + 2 * n + 1]);
        }
      }
    }

    // The token level starts from the mean of the known tokens.
    double mean = 0.0;
    int known = 0;
    for (int t = 0; t < kNumTokens; ++t) {
      if (mask.test(t)) continue;
      mean += pyramid[0][t];
      ++known;
    }
    for (int t = 0; t < kNumTokens; ++t) {
      if (mask.test(t)) pyramid[0][t] = static_cast<float>(mean / known);
    }
    solver.solve(0, pyramid[0], max_iters_, tol_);
    for (int k = 1; k < kLevels; ++k) {
      solver.prolong(k, pyramid[k - 1].data(), pyramid[k].data(), false);
      solver.solve(k, pyramid[k], max_iters_, tol_);
    }
    for (int r = 0; r < kRestorerSize; ++r) {
      for (int c = 0; c < kRestorerSize; ++c) {
        if (!mask.test(r * kTokenGrid / kRestorerSize, c * kTokenGrid / kRestorerSize)) {
          continue;
        }
        out.at(r, c, ch) =
            std::clamp(static_cast<double>(top[static_cast<std::size_t>(r) * kRestorerSize + c]),
                       0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace bdmae
