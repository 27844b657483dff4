#include <bit>
#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "gcm/checkpoint.hpp"
#include "gcm/nn.hpp"
#include "gcm/optim.hpp"
#include "test_util.hpp"

using namespace gcm;
using ad::Value;

TEST(Mlp2, ParameterShapesAndOutputShapes) {
  std::mt19937_64 rng(1);
  nn::ParameterStore s;
  const nn::Mlp2 mlp(s, "m", 5, 7, 3, rng);
  EXPECT_EQ(s.at("m.w1").shape(), (ad::Shape{5, 7}));
  EXPECT_EQ(s.at("m.b1").shape(), (ad::Shape{7}));
  EXPECT_EQ(s.at("m.w2").shape(), (ad::Shape{7, 3}));
  EXPECT_EQ(s.at("m.b2").shape(), (ad::Shape{3}));
  EXPECT_EQ(mlp(Value::zeros({4, 5})).shape(), (ad::Shape{4, 3}));
  EXPECT_EQ(mlp(Value::zeros({5})).shape(), (ad::Shape{3}));
  EXPECT_THROW(mlp(Value::zeros({4})), DimensionError);
}

TEST(Mlp2, BatchRowsEqualSingleRows) {
  std::mt19937_64 rng(2);
  nn::ParameterStore s;
  const nn::Mlp2 mlp(s, "m", 4, 6, 2, rng);
  const auto rows = gcm::testing::normal_vector(12, rng);
  const Value batch = mlp(Value::constant({3, 4}, rows));
  for (std::size_t r = 0; r < 3; ++r) {
    const Value single = mlp(Value::vector({rows.begin() + 4 * r, rows.begin() + 4 * r + 4}));
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(batch.at(r * 2 + j), single.at(j), 1e-14);
  }
}

TEST(Mlp2, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  nn::ParameterStore s;
  const nn::Mlp2 mlp(s, "m", 4, 5, 3, rng);
  const Value x = Value::constant({2, 4}, gcm::testing::normal_vector(8, rng));
  const std::vector<std::uint8_t> t = {1, 0, 1};
  const double err = gcm::testing::fd_error(s, [&] {
    return ad::bce_multilabel_loss(ad::reshape(ad::mean_pool(mlp(x)), {3}), t);
  });
  EXPECT_LT(err, 1e-4);
}

TEST(ParameterStore, FanInUniformInitAndZeroBiases) {
  std::mt19937_64 rng(4);
  nn::ParameterStore s;
  nn::Linear lin(s, "l", 24, 10, rng);
  const double limit = std::sqrt(6.0 / 24.0);
  double max_abs = 0.0;
  for (double v : s.at("l.w").data()) max_abs = std::max(max_abs, std::abs(v));
  EXPECT_LE(max_abs, limit);
  EXPECT_GT(max_abs, 0.8 * limit);
  for (double v : s.at("l.b").data()) EXPECT_EQ(v, 0.0);
}

TEST(ParameterStore, DuplicatesAndBadAssignsRejected) {
  nn::ParameterStore s;
  s.create_zeros("a", {2});
  EXPECT_THROW(s.create_zeros("a", {2}), ArgumentError);
  const std::vector<double> three = {1, 2, 3};
  EXPECT_THROW(s.assign("a", {3}, three), DimensionError);
  EXPECT_THROW(s.at("missing"), ArgumentError);
  EXPECT_EQ(s.scalar_count(), 2u);
}

TEST(Optimizer, SgdStepExample) {
  nn::ParameterStore s;
  Value theta = s.create_zeros("theta", {1});
  theta.mutable_data()[0] = 1.0;
  ad::backward(ad::scalar_mul(ad::sum(theta), 2.0));
  optim::Optimizer opt(optim::OptimizerKind::sgd, 0.1);
  opt.step(s);
  EXPECT_NEAR(theta.at(0), 0.8, 1e-15);
  EXPECT_EQ(opt.step_count(), 1u);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  for (double g : {2.0, -0.003, 50.0}) {
    nn::ParameterStore s;
    Value theta = s.create_zeros("theta", {1});
    ad::backward(ad::scalar_mul(ad::sum(theta), g));
    optim::Optimizer opt(optim::OptimizerKind::adam, 1e-3);
    opt.step(s);
    EXPECT_NEAR(theta.at(0), -std::copysign(1e-3, g), 1e-3 * 1e-4);
  }
}

TEST(Optimizer, AdamConvergesOnQuadratic) {
  nn::ParameterStore s;
  Value theta = s.create_zeros("theta", {1});
  optim::Optimizer opt(optim::OptimizerKind::adam, 0.1);
  for (int i = 0; i < 200; ++i) {
    s.zero_grad();
    const Value d = ad::add(theta, Value::constant({1}, {-3.0}));
    ad::backward(ad::sum(ad::mul(d, d)));
    opt.step(s);
  }
  EXPECT_LT(std::abs(theta.at(0) - 3.0), 1e-2);
  EXPECT_EQ(opt.moments().at("theta").first.size(), 1u);
}

TEST(Optimizer, MissingGradientIsStateError) {
  nn::ParameterStore s;
  s.create_zeros("a", {2});
  // Swap in a parameter whose gradient buffer was never allocated.
  s.all().at("a") = Value::constant({2}, {1, 2});
  optim::Optimizer opt(optim::OptimizerKind::adam, 0.1);
  EXPECT_THROW(opt.step(s), StateError);
}

TEST(Optimizer, NamesAndBadRates) {
  EXPECT_EQ(optim::optimizer_from_string("adam"), optim::OptimizerKind::adam);
  EXPECT_EQ(std::string(optim::to_string(optim::OptimizerKind::sgd)), "sgd");
  EXPECT_THROW(optim::optimizer_from_string("rmsprop"), ArgumentError);
  EXPECT_THROW(optim::Optimizer(optim::OptimizerKind::sgd, -1.0), ArgumentError);
}

TEST(Checkpoint, RoundTripIsByteStable) {
  std::mt19937_64 rng(5);
  nn::ParameterStore a;
  nn::Mlp2(a, "m", 3, 4, 2, rng);
  for (double& v : a.at("m.b1").mutable_data()) v = 1.0 / 3.0;
  const std::string text = serialize_checkpoint(a, {{"note", "x"}});

  std::mt19937_64 other(99);
  nn::ParameterStore b;
  nn::Mlp2(b, "m", 3, 4, 2, other);
  restore_parameters(parse_checkpoint(text), b);
  EXPECT_EQ(serialize_checkpoint(b, {{"note", "x"}}), text);
  for (const auto& [name, v] : a.all()) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      EXPECT_EQ(std::bit_cast<std::uint64_t>(v.at(i)), std::bit_cast<std::uint64_t>(b.at(name).at(i)));
    }
  }
}

TEST(Checkpoint, FileRoundTripAndSchemaErrors) {
  std::mt19937_64 rng(6);
  nn::ParameterStore a;
  nn::Linear(a, "l", 2, 2, rng);
  const auto path = (std::filesystem::temp_directory_path() / "gcm_test_ckpt.json").string();
  save_checkpoint(path, a, {{"epoch", 3}});
  nn::ParameterStore b;
  nn::Linear(b, "l", 2, 2, rng);
  EXPECT_EQ(load_checkpoint(path, b).at("epoch"), 3);
  EXPECT_EQ(read_text_file(path), serialize_checkpoint(b, {{"epoch", 3}}));

  EXPECT_THROW(parse_checkpoint("{not json"), ParseError);
  EXPECT_THROW(parse_checkpoint(R"({"format":"other","version":1,"params":{}})"), ParseError);
  nn::ParameterStore c;
  nn::Linear(c, "l", 2, 3, rng);
  EXPECT_THROW(restore_parameters(parse_checkpoint(read_text_file(path)), c), DimensionError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt", c), IoError);
  std::filesystem::remove(path);
}
