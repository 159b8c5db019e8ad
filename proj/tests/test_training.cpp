#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "slicemoa/training.hpp"
#include "support/fixtures.hpp"

using namespace slicemoa;

namespace {

std::vector<Parameter> scalar_param(double value, double grad) {
  std::vector<Parameter> params{{"theta", Tensor({1}, {value}, true)}};
  params[0].value.mutable_grad()[0] = grad;
  return params;
}

ModelConfig small_config(ModelKind kind, std::size_t d, std::size_t k, std::size_t c) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.input_dim = d;
  cfg.num_slices = k;
  cfg.num_classes = c;
  return cfg;
}

}  // namespace

TEST(Adam, ZeroGradientNoDecayLeavesParameters) {
  auto params = scalar_param(0.7, 0.0);
  Adam opt(params, AdamConfig{});
  opt.step();
  EXPECT_EQ(params[0].value.item(), 0.7);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto params = scalar_param(0.0, 1.0);
  Adam opt(params, AdamConfig{});
  opt.step();
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(params[0].value.item(), -1e-3 / (1 + 1e-8), 1e-15);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, PureDecay) {
  auto params = scalar_param(2.0, 0.0);
  AdamConfig cfg;
  cfg.lr = 1e-3;
  cfg.weight_decay = 0.1;
  Adam opt(params, cfg);
  opt.step();
  EXPECT_DOUBLE_EQ(params[0].value.item(), 2.0 * (1 - 1e-4));
}

TEST(Adam, NonFiniteGradientNamesTensor) {
  auto params = scalar_param(1.0, std::numeric_limits<double>::quiet_NaN());
  Adam opt(params, AdamConfig{});
  try {
    opt.step();
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("'theta'"), std::string::npos);
  }
  EXPECT_EQ(params[0].value.item(), 1.0);
}

TEST(TrainConfigCheck, Invariants) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.patience = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.patience = 600;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.lr = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.weight_decay = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_EQ(TrainConfig{}.selection_for(2), Metric::mcc);
  EXPECT_EQ(TrainConfig{}.selection_for(5), Metric::accuracy);
}

TEST(Training, OneSmallStepDescends) {
  for (CombineOp op : {CombineOp::add, CombineOp::mul}) {
    auto cfg = small_config(ModelKind::sbl_moa, 8, 3, 4);
    cfg.dropout = 0.0;
    cfg.moa.combine_op = op;
    Rng rng(42);
    SliceModel m(cfg, rng);
    std::vector<double> xs(6 * 8);
    for (double& v : xs) v = rng.uniform(-1, 1);
    const Tensor x({6, 8}, xs);
    const std::vector<double> gamma{1, 0, 1, 1, 1, 0, 1, 0, 0, 1, 1, 1, 1, 0, 1, 1, 1, 1};
    const std::vector<std::size_t> y{0, 1, 2, 3, 1, 2};
    const Tensor before = m.loss(m.forward(x), gamma, y).total;
    before.backward();
    AdamConfig ac;
    ac.lr = 1e-4;
    Adam opt(m.parameters(), ac);
    opt.step();
    EXPECT_LT(m.loss(m.forward(x), gamma, y).total.item(), before.item()) << to_string(op);
  }
}

TEST(Training, EmptySplitsAreConfigErrors) {
  Rng rng(0);
  SliceModel m(small_config(ModelKind::baseline, 4, 1, 2), rng);
  LabeledSplit empty;
  empty.dim = 4;
  const auto some = slicemoa::testing::separable_split(10, 4, 1);
  EXPECT_THROW(train(m, empty, some, TrainConfig{}), ConfigError);
  EXPECT_THROW(train(m, some, empty, TrainConfig{}), ConfigError);
}

TEST(Training, SeparableToyIsFitByBaseline) {
  const auto data = slicemoa::testing::separable_split(200, 8, 5);
  auto cfg = small_config(ModelKind::baseline, 8, 1, 2);
  Rng rng(1);
  SliceModel m(cfg, rng);
  TrainConfig tc;
  tc.max_epochs = 500;
  tc.patience = 50;
  tc.selection_metric = Metric::f1;
  const auto result = train(m, data, data, tc);
  EXPECT_GE(score(m, data, Metric::f1), 0.99);
  EXPECT_EQ(result.best_score, score(m, data, Metric::f1));
}

TEST(Training, HistoryBoundsAndBestSnapshot) {
  const auto train_split = slicemoa::testing::separable_split(120, 6, 8);
  const auto val_split = slicemoa::testing::separable_split(60, 6, 9);
  auto cfg = small_config(ModelKind::sbl_moa, 6, 1, 2);
  Rng rng(2);
  SliceModel m(cfg, rng);
  TrainConfig tc;
  tc.max_epochs = 40;
  tc.patience = 5;
  tc.seed = 3;
  std::size_t callbacks = 0;
  const auto result = train(m, train_split, val_split, tc, [&](const EpochRecord&) { ++callbacks; });
  EXPECT_EQ(callbacks, result.history.size());
  EXPECT_LE(result.history.size(), tc.max_epochs);
  EXPECT_GE(result.history.size(), std::min(tc.patience + 1, tc.max_epochs));
  double best = -2.0, prev_best = -2.0;
  for (const auto& rec : result.history) {
    best = std::max(best, rec.val_score);
    EXPECT_EQ(rec.best_score, best);
    EXPECT_GE(rec.best_score, prev_best);
    prev_best = rec.best_score;
    EXPECT_NEAR(rec.loss, rec.indicator_loss + rec.expert_loss + rec.task_loss, 1e-9);
  }
  EXPECT_EQ(result.best_score, best);
  EXPECT_EQ(score(m, val_split, result.selection_metric), best);
  EXPECT_EQ(result.history[result.best_epoch - 1].val_score, best);
}

TEST(Training, IdenticalSeedsGiveIdenticalRuns) {
  const auto ds = slicemoa::testing::polarity_dataset(200, 0.1, 4);
  const auto schema = acceptability_schema();
  const auto split = slicemoa::testing::embed_split(ds, schema, 32);
  for (Phi phi : {Phi::softmax, Phi::gumbel_hard}) {
    auto cfg = small_config(ModelKind::sbl_moa, 32, schema.size(), 2);
    cfg.moa.phi = phi;
    TrainConfig tc;
    tc.max_epochs = 5;
    tc.patience = 5;
    tc.seed = 11;
    auto run = [&] {
      Rng init(tc.seed, "init");
      SliceModel m(cfg, init);
      const auto r = train(m, split, split, tc);
      std::vector<double> flat;
      for (const auto& p : m.parameters()) flat.insert(flat.end(), p.value.data().begin(), p.value.data().end());
      return std::make_pair(r.history.back().loss, flat);
    };
    const auto a = run(), b = run();
    EXPECT_EQ(std::memcmp(&a.first, &b.first, sizeof(double)), 0) << to_string(phi);
    EXPECT_EQ(a.second, b.second) << to_string(phi);
  }
}

TEST(Training, DimensionMismatchRejected) {
  Rng rng(0);
  SliceModel m(small_config(ModelKind::sbl, 5, 1, 2), rng);
  const auto data = slicemoa::testing::separable_split(10, 4, 1);
  EXPECT_THROW(train(m, data, data, TrainConfig{}), DimensionError);
}
