// Copyright (c) 2026 the warpaug authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <random>

#include "warpaug/mlp.hpp"

using namespace warpaug;

TEST(R2Score, KnownValues) {
  std::vector<double> y{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(r2Score(y, y), 1.0);
  std::vector<double> mean_pred(4, 2.5);
  EXPECT_DOUBLE_EQ(r2Score(y, mean_pred), 0.0);
  // ss_res = 0.01+0.01+0.04+0.04 = 0.10; ss_tot = 5.0 -> r2 = 0.98
  std::vector<double> yhat{1.1, 1.9, 3.2, 3.8};
  EXPECT_NEAR(r2Score(y, yhat), 0.98, 1e-12);
  std::vector<double> constant(4, 7.0);
  EXPECT_THROW(r2Score(constant, yhat), Error);
}

TEST(LossR2, IsExactly100TimesOneMinusR2) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 3);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> y(6), yhat(6);
    for (int i = 0; i < 6; ++i) {
      y[i] = n(rng);
      yhat[i] = n(rng);
    }
    if (std::abs(y[0] - y[1]) < 1e-9) continue;
    EXPECT_EQ(lossR2(y, yhat), 100.0 * (1.0 - r2Score(y, yhat)));
  }
  std::vector<double> y{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(lossR2(y, y), 0.0);
  std::vector<double> mean_pred(4, 2.5);
  EXPECT_DOUBLE_EQ(lossR2(y, mean_pred), 100.0);
  // r2 = 0.141 -> loss 85.9
  double loss = 100.0 * (1.0 - 0.141);
  EXPECT_NEAR(loss, 85.9, 1e-9);
}

TEST(Rmse, KnownValue) {
  std::vector<double> y{3, -4}, yhat{0, 0};
  EXPECT_NEAR(rmse(y, yhat), 3.5355339059327378, 1e-9);
}

namespace {

struct LinearData {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd w;
};

LinearData makeLinearData(int n, int d, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0, 1);
  LinearData data;
  data.x.resize(n, d);
  data.w.resize(d);
  for (int c = 0; c < d; ++c) data.w[c] = normal(rng);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c) data.x(r, c) = normal(rng);
  data.y = data.x * data.w;
  for (int r = 0; r < n; ++r) data.y[r] += 2.0;  // intercept
  return data;
}

}  // namespace

TEST(TrainModel, LinearModelMatchesClosedFormLeastSquares) {
  LinearData data = makeLinearData(60, 5, 11);
  ModelConfig config;
  config.n_layers = 0;
  config.learning_rate = 0.05;
  config.epochs = 2000;
  config.weight_seed = 3;
  TrainedModel model = trainModel(data.x, data.y, config);
  EvalResult train_eval = evaluate(model, data.x, data.y);
  EXPECT_GE(train_eval.r2, 0.999);
  EXPECT_LT(train_eval.rmse, 0.1);

  // closed-form oracle on the same data
  Eigen::MatrixXd xa(data.x.rows(), data.x.cols() + 1);
  xa << data.x, Eigen::VectorXd::Ones(data.x.rows());
  Eigen::VectorXd beta = (xa.transpose() * xa).ldlt().solve(xa.transpose() * data.y);
  Eigen::VectorXd resid = data.y - xa * beta;
  EXPECT_LT(resid.norm(), 1e-9);  // data is exactly linear
}

TEST(TrainModel, DeterministicWithoutDropout) {
  LinearData data = makeLinearData(30, 4, 12);
  ModelConfig config;
  config.n_layers = 2;
  config.neurons_per_layer = 16;
  config.epochs = 50;
  config.weight_seed = 42;
  TrainedModel a = trainModel(data.x, data.y, config);
  TrainedModel b = trainModel(data.x, data.y, config);
  for (size_t l = 0; l < a.weights.size(); ++l) {
    EXPECT_EQ(a.weights[l], b.weights[l]);
    EXPECT_EQ(a.biases[l], b.biases[l]);
  }
  EXPECT_EQ(a.history, b.history);
}

TEST(TrainModel, GradientMatchesCentralFiniteDifferences) {
  LinearData data = makeLinearData(20, 4, 13);
  for (Activation act :
       {Activation::relu, Activation::tanh, Activation::sigmoid}) {
    ModelConfig config;
    config.n_layers = 2;
    config.neurons_per_layer = 8;
    config.activation = act;
    config.epochs = 1;
    config.weight_seed = 7;
    TrainedModel model = trainModel(data.x, data.y, config);
    Eigen::MatrixXd x_std = detail::standardize(model, data.x);

    detail::ParamGrads grads;
    detail::lossAndGradient(model, x_std, data.y, &grads, nullptr);
    std::mt19937_64 rng(19);
    const double h = 1e-4;
    int checked = 0;
    for (int trial = 0; trial < 20; ++trial) {
      size_t layer = rng() % model.weights.size();
      Eigen::Index r = rng() % model.weights[layer].rows();
      Eigen::Index c = rng() % model.weights[layer].cols();
      TrainedModel pert = model;
      pert.weights[layer](r, c) += h;
      double lp = detail::lossAndGradient(pert, x_std, data.y, nullptr, nullptr);
      pert.weights[layer](r, c) -= 2 * h;
      double lm = detail::lossAndGradient(pert, x_std, data.y, nullptr, nullptr);
      double fd = (lp - lm) / (2 * h);
      double an = grads.dw[layer](r, c);
      double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      EXPECT_LT(std::abs(fd - an) / denom, 1e-4)
          << activationName(act) << " layer " << layer;
      ++checked;
    }
    EXPECT_EQ(checked, 20);
  }
}

TEST(TrainModel, RejectsBadInputs) {
  LinearData data = makeLinearData(3, 2, 14);
  ModelConfig config;
  EXPECT_THROW(trainModel(data.x, data.y, config), Error);  // n < 4
  LinearData ok = makeLinearData(10, 2, 15);
  Eigen::VectorXd constant = Eigen::VectorXd::Ones(10);
  EXPECT_THROW(trainModel(ok.x, constant, config), Error);  // var(y) = 0
  config.dropout_rate = 1.0;
  EXPECT_THROW(config.validate(), Error);
}

TEST(Predict, DeterministicAndShapeChecked) {
  LinearData data = makeLinearData(20, 3, 16);
  ModelConfig config;
  config.n_layers = 1;
  config.neurons_per_layer = 8;
  config.epochs = 30;
  config.dropout_rate = 0.3;  // exercised during training only
  TrainedModel model = trainModel(data.x, data.y, config);
  auto a = predict(model, data.x);
  auto b = predict(model, data.x);
  EXPECT_EQ(a, b);
  Eigen::MatrixXd wrong(2, 5);
  EXPECT_THROW(predict(model, wrong), Error);
}

TEST(TrainModel, StandardizationAbsorbsFeatureScaling) {
  LinearData data = makeLinearData(40, 4, 17);
  ModelConfig config;
  config.n_layers = 1;
  config.neurons_per_layer = 8;
  config.epochs = 200;
  config.weight_seed = 5;
  TrainedModel base = trainModel(data.x, data.y, config);
  Eigen::MatrixXd scaled = data.x;
  scaled.col(1) = scaled.col(1) * 50.0;
  scaled.col(1).array() += 300.0;
  TrainedModel shifted = trainModel(scaled, data.y, config);
  auto pa = predict(base, data.x);
  auto pb = predict(shifted, scaled);
  for (size_t i = 0; i < pa.size(); ++i) EXPECT_NEAR(pa[i], pb[i], 1e-6);
}

TEST(Dropout, InvertedScalingPreservesExpectedActivation) {
  // Monte Carlo over masks: E[train-time activation] ~ inference activation
  const double keep = 0.7;
  std::mt19937_64 rng(23);
  std::bernoulli_distribution keep_dist(keep);
  const int trials = 10000;
  double value = 1.7;
  double acc = 0;
  for (int t = 0; t < trials; ++t)
    acc += keep_dist(rng) ? value / keep : 0.0;
  EXPECT_NEAR(acc / trials, value, 0.02 * value);
}
