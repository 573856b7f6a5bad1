#pragma once

#include <cmath>
#include <vector>

#include "prunelab/nn.hpp"
#include "prunelab/rng.hpp"
#include "support/reference_net.hpp"

namespace testutil {

using namespace prunelab;

// |a-b| <= rtol*max(|a|,|b|) + atol; the atol floor absorbs float32 forward
// rounding when comparing against the float64 oracle.
inline bool close(double a, double b, double rtol, double atol) {
  return std::fabs(a - b) <= rtol * std::max(std::fabs(a), std::fabs(b)) + atol;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::fabs(a - b) /
         std::max({std::fabs(a), std::fabs(b), floor});
}

inline Batch random_batch(Rng& rng, const Shape& example_shape, int classes,
                          int64_t n) {
  Shape shape = example_shape;
  shape.insert(shape.begin(), n);
  Batch b{Tensor(shape), {}};
  for (int64_t i = 0; i < b.x.size(); ++i)
    b.x[i] = static_cast<float>(rng.next_gaussian());
  for (int64_t i = 0; i < n; ++i)
    b.labels.push_back(static_cast<int>(rng.next_below(classes)));
  return b;
}

struct RandomCase {
  ModelSpec spec;
  uint64_t model_seed = 0;
  Batch batch;
};

// Random small model + batch whose forward pass stays clear of relu and
// max-pool kinks, so central differences see a smooth function. Resamples
// (deterministically) until the margins exceed `margin`. Wide cases push the
// layer widths up to 64 but stay linear, where no kink can appear; narrow
// cases carry the relu/pool coverage.
inline RandomCase safe_random_case(uint64_t seed, bool allow_conv,
                                   double margin = 1e-2, bool wide = false) {
  for (uint64_t attempt = 0;; ++attempt) {
    Rng rng(substream_seed(seed + attempt * 7919, "case"));
    if (wide) {
      RandomCase c;
      const int classes = 2 + static_cast<int>(rng.next_below(8));
      const int depth = 2 + static_cast<int>(rng.next_below(2));
      std::vector<int64_t> widths;
      widths.push_back(33 + static_cast<int64_t>(rng.next_below(32)));
      for (int i = 0; i < depth; ++i)
        widths.push_back(33 + static_cast<int64_t>(rng.next_below(32)));
      widths.push_back(classes);
      c.spec.input_shape = {widths.front()};
      c.spec.num_classes = classes;
      c.spec.layers.push_back(FlattenSpec{});
      for (size_t i = 0; i + 1 < widths.size(); ++i)
        c.spec.layers.push_back(DenseSpec{widths[i], widths[i + 1],
                                          Activation::none,
                                          rng.next_below(2) == 0});
      c.model_seed = rng.next_u64();
      c.batch = random_batch(rng, c.spec.input_shape, classes,
                             1 + static_cast<int64_t>(rng.next_below(4)));
      return c;
    }
    RandomCase c;
    const bool conv = allow_conv && rng.next_below(4) == 0;
    const int classes = 2 + static_cast<int>(rng.next_below(4));
    if (conv) {
      const int in_ch = 1 + static_cast<int>(rng.next_below(2));
      const int f = 1 + static_cast<int>(rng.next_below(3));
      const int side = 5 + static_cast<int>(rng.next_below(3));
      c.spec.input_shape = {in_ch, side, side};
      c.spec.num_classes = classes;
      c.spec.layers = {
          Conv2DSpec{in_ch, f, 3, 1, 1, Activation::relu,
                     rng.next_below(2) == 0},
          MaxPoolSpec{2, 2},
          FlattenSpec{},
          DenseSpec{f * (side / 2) * (side / 2), classes, Activation::none,
                    true},
      };
    } else {
      const int depth = 1 + static_cast<int>(rng.next_below(4));
      std::vector<int64_t> widths;
      widths.push_back(2 + static_cast<int64_t>(rng.next_below(6)));
      for (int i = 0; i < depth; ++i)
        widths.push_back(1 + static_cast<int64_t>(rng.next_below(7)));
      widths.push_back(classes);
      c.spec = mlp_spec(widths, classes, rng.next_below(4) != 0);
    }
    c.model_seed = rng.next_u64();
    Model model(c.spec, c.model_seed);
    c.batch = random_batch(rng, c.spec.input_shape, classes,
                           1 + static_cast<int64_t>(rng.next_below(4)));

    refnet::ForwardStats stats;
    refnet::loss_ce(model, c.batch, &stats);
    if (stats.min_relu_margin > margin && stats.min_pool_margin > margin)
      return c;
  }
}

}  // namespace testutil
