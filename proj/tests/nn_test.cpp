#include <doctest.h>

#include <cmath>

#include "support/helpers.hpp"

using namespace prunelab;
using testutil::close;

namespace {

Model dense21(float w0, float w1, float m0 = 1.0f, float m1 = 1.0f) {
  ModelSpec spec;
  spec.input_shape = {2};
  spec.num_classes = 1;
  spec.layers = {DenseSpec{2, 1, Activation::none, false}};
  Model model(spec, 0);
  model.param("layer0.weight").value = Tensor::from({2, 1}, {w0, w1});
  model.param("layer0.weight").mask = Tensor::from({2, 1}, {m0, m1});
  return model;
}

// L = 0.5 * sum(logits^2): squared error to target 0, for the hand-worked
// sensitivity cases
const LossFn se_to_zero = [](Tape& tape, Var logits, const Batch&) {
  (void)tape;
  return scale(sum(mul(logits, logits)), 0.5);
};

}  // namespace

TEST_CASE("build_model is deterministic for a fixed seed") {
  ModelSpec spec = mlp_spec({2, 3, 2}, 2);
  Model a(spec, 7);
  Model b(spec, 7);
  for (size_t i = 0; i < a.params().size(); ++i)
    CHECK(bitwise_equal(a.params()[i].value, b.params()[i].value));
  Model c(spec, 8);
  CHECK(!bitwise_equal(a.params()[0].value, c.params()[0].value));
}

TEST_CASE("fresh model has sparsity zero") {
  Model m(mlp_spec({4, 3, 2}, 2), 1);
  CHECK(m.sparsity() == 0.0);
  CHECK(m.density() == 1.0);
}

TEST_CASE("non-composing specs are rejected") {
  ModelSpec spec;
  spec.input_shape = {2, 3, 3};
  spec.num_classes = 2;
  spec.layers = {FlattenSpec{}, DenseSpec{17, 2, Activation::none, true}};
  CHECK_THROWS_AS(Model(spec, 0), InvalidSpec);

  ModelSpec head;
  head.input_shape = {4};
  head.num_classes = 3;
  head.layers = {DenseSpec{4, 2, Activation::none, true}};
  CHECK_THROWS_AS(Model(head, 0), InvalidSpec);  // head width != classes
}

TEST_CASE("forward of a hand-built dense layer") {
  Model m = dense21(1.0f, 2.0f);
  Tensor logit = forward_logits(m, Tensor::from({1, 2}, {1, 1}));
  CHECK(logit[0] == 3.0f);

  Model masked = dense21(1.0f, 2.0f, 0.0f, 0.0f);
  CHECK(forward_logits(masked, Tensor::from({1, 2}, {1, 1}))[0] == 0.0f);

  CHECK_THROWS_AS(forward_logits(m, Tensor::from({1, 3}, {1, 1, 1})),
                  DimensionMismatch);
}

TEST_CASE("cross-entropy on uniform logits is ln K") {
  Tape tape;
  Var logits = tape.leaf(Tensor({2, 10}));
  std::vector<int> labels{3, 7};
  CHECK(loss_ce(tape, logits, labels).value()[0] ==
        doctest::Approx(std::log(10.0)).epsilon(1e-6));
}

TEST_CASE("cross-entropy saturates for a dominant correct logit") {
  Tape tape;
  Tensor t({1, 10});
  t[4] = 30.0f;
  Var logits = tape.leaf(t);
  std::vector<int> labels{4};
  CHECK(loss_ce(tape, logits, labels).value()[0] < 1e-9);
}

TEST_CASE("cross-entropy rejects out-of-range labels") {
  Tape tape;
  Var logits = tape.leaf(Tensor({1, 10}));
  std::vector<int> labels{10};
  CHECK_THROWS_AS(loss_ce(tape, logits, labels), LabelOutOfRange);
  std::vector<int> negative{-1};
  CHECK_THROWS_AS(loss_ce(tape, logits, negative), LabelOutOfRange);
}

TEST_CASE("model_grads on the hand-worked squared-error case") {
  // θ=[1,2], x=[1,1], ŷ=3, L=0.5ŷ² → ∂L/∂w = x·ŷ = [3,3]
  Model m = dense21(1.0f, 2.0f);
  Batch batch{Tensor::from({1, 2}, {1, 1}), {0}};
  GradientMap g = model_grads(m, batch, se_to_zero);
  CHECK(g.at("layer0.weight")[0] == doctest::Approx(3.0f));
  CHECK(g.at("layer0.weight")[1] == doctest::Approx(3.0f));
}

TEST_CASE("model_grads of a zero input batch with no bias is zero") {
  Model m = dense21(1.0f, 2.0f);
  Batch batch{Tensor({4, 2}), {0, 0, 0, 0}};
  GradientMap g = model_grads(m, batch, se_to_zero);
  CHECK(g.at("layer0.weight")[0] == 0.0f);
  CHECK(g.at("layer0.weight")[1] == 0.0f);
}

TEST_CASE("model_grads rejects an empty batch") {
  Model m = dense21(1.0f, 2.0f);
  Batch batch;
  CHECK_THROWS_AS(model_grads(m, batch), InvalidArg);
}

TEST_CASE("model_grads matches the oracle on 20 random models") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto c = testutil::safe_random_case(9000 + seed, false);
    Model model(c.spec, c.model_seed);
    GradientMap g = model_grads(model, c.batch);
    for (const auto& p : model.params()) {
      Tensor fd = finite_diff_gradient(
          refnet::loss_of_effective(model, c.batch, p.id), p.effective(),
          1e-3);
      for (int64_t i = 0; i < fd.size(); ++i)
        CHECK(close(g.at(p.id)[i], fd[i], 1e-3, 1e-5));
    }
  }
}

TEST_CASE("mask_gradient identity on the hand case") {
  // θ=[1,2], g=[3,3] → ∂L/∂m = θ⊙g = [3,6]
  Model m = dense21(1.0f, 2.0f);
  GradientMap grads;
  grads.emplace("layer0.weight", Tensor::from({2, 1}, {3, 3}));
  GradientMap mg = mask_gradient(m, grads);
  CHECK(mg.at("layer0.weight")[0] == doctest::Approx(3.0f));
  CHECK(mg.at("layer0.weight")[1] == doctest::Approx(6.0f));

  // zero weight kills its mask gradient
  Model z = dense21(0.0f, 2.0f);
  GradientMap mz = mask_gradient(z, grads);
  CHECK(mz.at("layer0.weight")[0] == 0.0f);

  GradientMap empty;
  CHECK_THROWS_AS(mask_gradient(m, empty), MissingParameter);
}

TEST_CASE("mask_gradient matches finite differences through the mask") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    auto c = testutil::safe_random_case(31000 + seed, false);
    Model model(c.spec, c.model_seed);
    GradientMap mg = mask_gradient(model, model_grads(model, c.batch));
    for (const auto& p : model.params()) {
      if (!p.prunable) continue;
      Tensor fd = finite_diff_gradient(
          refnet::loss_of_mask(model, c.batch, p.id), p.mask, 1e-3);
      for (int64_t i = 0; i < fd.size(); ++i)
        CHECK(close(mg.at(p.id)[i], fd[i], 1e-3, 1e-5));
    }
  }
}

TEST_CASE("mask-gradient identity holds to 1e-6 relative") {
  auto c = testutil::safe_random_case(67, false);
  Model model(c.spec, c.model_seed);
  GradientMap g = model_grads(model, c.batch);
  GradientMap mg = mask_gradient(model, g);
  for (const auto& p : model.params()) {
    if (!p.prunable) continue;
    for (int64_t i = 0; i < p.value.size(); ++i) {
      const double expect =
          static_cast<double>(p.value[i]) * g.at(p.id)[i];
      CHECK(close(mg.at(p.id)[i], expect, 1e-6, 1e-12));
    }
  }
}

TEST_CASE("mask idempotence and masked neutrality") {
  auto c = testutil::safe_random_case(91, false);
  Model model(c.spec, c.model_seed);
  Tensor a = forward_logits(model, c.batch.x);
  Tensor b = forward_logits(model, c.batch.x);
  CHECK(bitwise_equal(a, b));

  // zero a handful of masks; arbitrary θ under a zero mask must behave like θ=0
  Parameter& w = model.param("layer1.weight");
  Rng rng(4242);
  for (int rep = 0; rep < 5; ++rep) {
    const int64_t j = static_cast<int64_t>(rng.next_below(w.value.size()));
    Model masked = model;
    masked.param(w.id).mask[j] = 0.0f;
    masked.param(w.id).value[j] = 1234.5f;
    Model zeroed = model;
    zeroed.param(w.id).mask[j] = 0.0f;
    zeroed.param(w.id).value[j] = 0.0f;
    CHECK(bitwise_equal(forward_logits(masked, c.batch.x),
                        forward_logits(zeroed, c.batch.x)));
  }
}

TEST_CASE("desk MLP has 266610 parameters, 266200 prunable") {
  Model m(desk_mlp_spec(), 3);
  int64_t total = 0;
  for (const auto& p : m.params()) total += p.value.size();
  CHECK(total == 266610);
  CHECK(m.prunable_count() == 266200);
}

TEST_CASE("forward works on the small conv model") {
  Model m(small_conv_spec(), 11);
  Tensor x({2, 1, 28, 28});
  for (int64_t i = 0; i < x.size(); ++i)
    x[i] = static_cast<float>((i % 7) - 3) * 0.1f;
  Tensor logits = forward_logits(m, x);
  CHECK(logits.shape() == Shape{2, 10});
  CHECK(logits.all_finite());
}
