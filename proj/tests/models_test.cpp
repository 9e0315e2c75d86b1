#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "halluc/gradcheck.hpp"
#include "halluc/models.hpp"

using namespace halluc;

namespace {

Matrix random_matrix(int r, int c, RngStream& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data) v = scale * rng.gaussian();
  return m;
}

std::string temp_path(const std::string& stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

}  // namespace

TEST(ForwardEmbed, ZeroDepthBackboneIsIdentity) {
  Model m = init_model(4, {}, 64, 3, 0);
  EXPECT_TRUE(m.backbone.layers.empty());
  EXPECT_EQ(m.backbone.embed_dim, 4);
  Matrix x(2, 4, {1, -2, 3, -4, 0.5, 0, -0.5, 7});
  Graph g;
  DiffNode* emb = forward_embed(g, m.backbone, g.constant(x));
  EXPECT_EQ(emb->value.data, x.data);
  EXPECT_EQ(embed_frozen(m.backbone, x).data, x.data);
}

TEST(ForwardEmbed, IdentityWeightsWithNonNegativeInput) {
  Model m = init_model(3, {3}, 3, 2, 0);
  ASSERT_EQ(m.backbone.layers.size(), 2u);
  for (Layer& l : m.backbone.layers) {
    l.weight.value.fill(0.0);
    for (int i = 0; i < 3; ++i) l.weight.value(i, i) = 1.0;
    l.bias.value.fill(0.0);
  }
  Matrix x(2, 3, {0, 1, 2, 3, 4, 5});
  Graph g;
  DiffNode* emb = forward_embed(g, m.backbone, g.constant(x));
  EXPECT_EQ(emb->value.data, x.data);
}

TEST(ForwardEmbed, InputWidthMismatchThrows) {
  Model m = init_model(4, {8}, 8, 3, 0);
  Graph g;
  DiffNode* x = g.constant(Matrix(2, 5));
  EXPECT_THROW(forward_embed(g, m.backbone, x), ContractError);
  EXPECT_THROW(embed_frozen(m.backbone, Matrix(2, 5)), ContractError);
}

TEST(ForwardEmbed, GradientThroughTwoLayerBackboneMatchesFiniteDifferences) {
  RngStream rng(21);
  Model m = init_model(6, {5}, 4, 3, 77);
  Matrix x = random_matrix(3, 6, rng);
  Matrix w = random_matrix(3, 4, rng);
  auto build = [&](Graph& g) {
    DiffNode* emb = forward_embed(g, m.backbone, g.constant(x));
    return g.sum(g.hadamard(emb, g.constant(w)));
  };
  auto report = check_gradients(m.backbone.params(), build);
  EXPECT_LT(report.max_rel_error, 1e-4);
  EXPECT_GT(report.checked_elements, 0);
}

TEST(ForwardLogits, ZeroWeightHeadGivesConstantBias) {
  Model m = init_model(4, {6}, 5, 3, 1);
  m.head.weight.value.fill(0.0);
  m.head.bias.value = Matrix(1, 3, {0.5, -1.5, 2.0});
  RngStream rng(2);
  Graph g;
  DiffNode* logits = forward_logits(g, m, g.constant(random_matrix(4, 4, rng)));
  for (int i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(logits->value(i, 0), 0.5);
    EXPECT_DOUBLE_EQ(logits->value(i, 1), -1.5);
    EXPECT_DOUBLE_EQ(logits->value(i, 2), 2.0);
  }
}

TEST(ForwardLogits, HandComputedSingleExample) {
  // identity backbone, head w = [[1,2],[3,4]], b = [0.5, -0.5], x = [1, 2]
  // logits = [1*1 + 2*3 + 0.5, 1*2 + 2*4 - 0.5] = [7.5, 9.5]
  Model m = init_model(2, {}, 2, 2, 0);
  m.head.weight.value = Matrix(2, 2, {1, 2, 3, 4});
  m.head.bias.value = Matrix(1, 2, {0.5, -0.5});
  Graph g;
  DiffNode* logits = forward_logits(g, m, g.constant(Matrix(1, 2, {1, 2})));
  EXPECT_NEAR(logits->value(0, 0), 7.5, 1e-10);
  EXPECT_NEAR(logits->value(0, 1), 9.5, 1e-10);
}

TEST(ForwardLogits, BatchShapeIsExamplesByClasses) {
  Model m = init_model(7, {6, 5}, 4, 9, 3);
  RngStream rng(4);
  Graph g;
  DiffNode* logits = forward_logits(g, m, g.constant(random_matrix(11, 7, rng)));
  EXPECT_EQ(logits->value.rows, 11);
  EXPECT_EQ(logits->value.cols, 9);
}

TEST(ForwardLogits, CompositionMatchesManualHeadApplication) {
  Model m = init_model(5, {6}, 4, 3, 5);
  RngStream rng(6);
  Matrix x = random_matrix(8, 5, rng);
  Graph g;
  DiffNode* composed = forward_logits(g, m, g.constant(x));
  DiffNode* emb = forward_embed(g, m.backbone, g.constant(x));
  DiffNode* manual = g.add_rowvec(g.matmul(emb, g.leaf(m.head.weight)), g.leaf(m.head.bias));
  EXPECT_EQ(composed->value.data, manual->value.data);
  EXPECT_EQ(logits_frozen(m.backbone, m.head, x).data, composed->value.data);
}

TEST(InitModel, DeterministicInSeed) {
  Model a = init_model(8, {16, 16}, 8, 5, 123);
  Model b = init_model(8, {16, 16}, 8, 5, 123);
  Model c = init_model(8, {16, 16}, 8, 5, 124);
  for (size_t i = 0; i < a.backbone.layers.size(); ++i)
    EXPECT_EQ(a.backbone.layers[i].weight.value.data, b.backbone.layers[i].weight.value.data);
  EXPECT_EQ(a.head.weight.value.data, b.head.weight.value.data);
  EXPECT_NE(a.backbone.layers[0].weight.value.data, c.backbone.layers[0].weight.value.data);
}

TEST(InitModel, HeStdWithinTenPercent) {
  Model m = init_model(100, {100}, 100, 2, 9);
  const Matrix& w = m.backbone.layers[0].weight.value;
  ASSERT_EQ(w.size(), 10000u);
  double sum = 0.0, sum_sq = 0.0;
  for (double v : w.data) {
    sum += v;
    sum_sq += v * v;
  }
  const double n = static_cast<double>(w.size());
  const double std = std::sqrt(sum_sq / n - (sum / n) * (sum / n));
  const double expected = std::sqrt(2.0 / 100.0);
  EXPECT_NEAR(std, expected, 0.1 * expected);
}

TEST(InitModel, BiasesAreZeroAndBadDimsRejected) {
  Model m = init_model(8, {16}, 4, 5, 11);
  for (Param* p : m.backbone.params())
    if (p->name.find("bias") != std::string::npos)
      for (double v : p->value.data) EXPECT_EQ(v, 0.0);
  for (double v : m.head.bias.value.data) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(init_model(0, {16}, 4, 5, 11), ConfigError);
  EXPECT_THROW(init_model(8, {0}, 4, 5, 11), ConfigError);
  EXPECT_THROW(init_model(8, {16}, 4, 0, 11), ConfigError);
}

TEST(ReplaceHead, FreshNovelWayHeadLeavesBackboneUntouched) {
  Model m = init_model(8, {16}, 4, 64, 13);
  std::vector<std::vector<double>> snapshot;
  for (Param* p : m.backbone.params()) snapshot.push_back(p->value.data);
  LinearHead h5 = replace_head(m.backbone, 5, 99);
  EXPECT_EQ(h5.classes(), 5);
  EXPECT_EQ(h5.in_dim(), 4);
  size_t i = 0;
  for (Param* p : m.backbone.params()) EXPECT_EQ(p->value.data, snapshot[i++]);
  LinearHead again = replace_head(m.backbone, 5, 99);
  EXPECT_EQ(h5.weight.value.data, again.weight.value.data);
  LinearHead other = replace_head(m.backbone, 5, 100);
  EXPECT_NE(h5.weight.value.data, other.weight.value.data);
}

TEST(ParamCount, PureFunctionOfDimensions) {
  Model a = init_model(8, {16, 12}, 4, 5, 1);
  Model b = init_model(8, {16, 12}, 4, 5, 999);
  EXPECT_EQ(param_count(a), param_count(b));
  // 8*16+16 + 16*12+12 + 12*4+4 + 4*5+5 = 144+204+52+25
  EXPECT_EQ(param_count(a), 425u);
}

TEST(MaskBaseGradients, ZeroesExactlyTheGatedGroups) {
  Model m = init_model(4, {6}, 5, 3, 17);
  for (Param* p : m.params()) {
    p->grad.fill(1.0);
    p->grad_live = true;
  }
  ParamGroupMask mask;
  mask.base_grads_to_backbone = false;
  mask.base_grads_to_head = true;
  mask_base_gradients(m, mask);
  for (Param* p : m.backbone.params())
    for (double v : p->grad.data) EXPECT_EQ(v, 0.0);
  for (Param* p : m.head.params())
    for (double v : p->grad.data) EXPECT_EQ(v, 1.0);
}

TEST(Checkpoint, FileRoundTripIsExact) {
  Model m = init_model(6, {8, 7}, 5, 4, 21);
  const std::string path = temp_path("halluc_ckpt.json");
  nlohmann::json state{{"epochs_done", 3}};
  save_checkpoint(path, m, state);
  auto [back, loaded_state] = load_checkpoint(path);
  EXPECT_EQ(loaded_state.at("epochs_done").get<int>(), 3);
  ASSERT_EQ(back.backbone.layers.size(), m.backbone.layers.size());
  for (size_t i = 0; i < m.backbone.layers.size(); ++i) {
    EXPECT_EQ(back.backbone.layers[i].weight.value.data,
              m.backbone.layers[i].weight.value.data);
    EXPECT_EQ(back.backbone.layers[i].bias.value.data, m.backbone.layers[i].bias.value.data);
  }
  EXPECT_EQ(back.head.weight.value.data, m.head.weight.value.data);
  EXPECT_EQ(back.head.bias.value.data, m.head.bias.value.data);
  EXPECT_EQ(back.backbone.hidden_dims, m.backbone.hidden_dims);
  std::remove(path.c_str());
}

TEST(Checkpoint, MalformedFilesAreDataErrors) {
  const std::string path = temp_path("halluc_bad_ckpt.json");
  std::ofstream(path) << "{\"format\": \"something-else\"}";
  EXPECT_THROW(load_checkpoint(path), DataError);
  std::ofstream(path) << "not json at all";
  EXPECT_THROW(load_checkpoint(path), DataError);
  std::remove(path.c_str());
  EXPECT_THROW(load_checkpoint(path), DataError);
}

TEST(Checkpoint, ShapeChainViolationRejected) {
  Model m = init_model(4, {6}, 5, 3, 25);
  nlohmann::json j = model_to_json(m);
  j["head"]["weight"]["rows"] = 7;
  j["head"]["weight"]["data"] = std::vector<double>(7 * 3, 0.0);
  EXPECT_THROW(model_from_json(j), DataError);
}
