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

/// @file mlp.hpp
/// @brief Feed-forward regression network trained with the R^2-based loss
///        L = 100 (1 - R^2): seeded init, full-batch Adam, inverted dropout,
///        stored input standardization.

#ifndef WARPAUG_MLP_HPP
#define WARPAUG_MLP_HPP

#include <string>
#include <vector>

#include "warpaug/common.hpp"

#include <Eigen/Dense>

namespace warpaug {

/// Coefficient of determination 1 - SS_res / SS_tot.
inline double r2Score(const std::vector<double>& y,
                      const std::vector<double>& yhat) {
  if (y.size() != yhat.size() || y.size() < 2)
    throw Error(ErrorKind::undefined_metric, "r2 needs two paired samples");
  double mean = 0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double ss_res = 0, ss_tot = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  if (ss_tot <= 0)
    throw Error(ErrorKind::undefined_metric, "r2 undefined for constant y");
  return 1.0 - ss_res / ss_tot;
}

/// The training loss: 100 (1 - r2Score).
inline double lossR2(const std::vector<double>& y,
                     const std::vector<double>& yhat) {
  return 100.0 * (1.0 - r2Score(y, yhat));
}

inline double rmse(const std::vector<double>& y,
                   const std::vector<double>& yhat) {
  if (y.size() != yhat.size() || y.empty())
    throw Error(ErrorKind::undefined_metric, "rmse needs paired samples");
  double acc = 0;
  for (size_t i = 0; i < y.size(); ++i)
    acc += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return std::sqrt(acc / static_cast<double>(y.size()));
}

enum class Activation { relu, tanh, sigmoid };

inline const char* activationName(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

struct ModelConfig {
  int n_layers = 1;            // hidden layers; 0 = linear model
  int neurons_per_layer = 32;
  Activation activation = Activation::relu;
  double dropout_rate = 0.0;
  double learning_rate = 1e-2;
  int parcellation_k = 100;
  int epochs = 500;
  uint64_t weight_seed = 0;

  void validate() const {
    if (n_layers < 0) throw Error(ErrorKind::parameter, "negative layer count");
    if (n_layers > 0 && neurons_per_layer < 1)
      throw Error(ErrorKind::parameter, "need at least one neuron per layer");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw Error(ErrorKind::parameter, "dropout must be in [0,1)");
    if (!(learning_rate > 0))
      throw Error(ErrorKind::parameter, "learning rate must be positive");
    if (epochs < 1) throw Error(ErrorKind::parameter, "epochs must be >= 1");
  }

  uint64_t contentHash() const {
    Hasher h;
    h.pod(n_layers).pod(neurons_per_layer).pod(static_cast<int>(activation));
    h.pod(dropout_rate).pod(learning_rate).pod(parcellation_k);
    h.pod(epochs).pod(weight_seed);
    return h.value();
  }
};

struct EvalResult {
  double r2 = 0.0;
  double rmse = 0.0;
  int n = 0;
};

struct TrainedModel {
  ModelConfig config;
  int input_dim = 0;
  std::vector<Eigen::MatrixXd> weights;  // layer l: (out x in)
  std::vector<Eigen::VectorXd> biases;
  Eigen::VectorXd feature_mean, feature_scale;  // stored standardization
  std::vector<double> history;                  // per-epoch training loss

  void validate() const {
    for (const auto& w : weights)
      if (!w.allFinite())
        throw Error(ErrorKind::invariant, "non-finite weights");
    for (const auto& b : biases)
      if (!b.allFinite())
        throw Error(ErrorKind::invariant, "non-finite biases");
  }
};

namespace detail {

inline double act(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0 ? z : 0.0;
    case Activation::tanh: return std::tanh(z);
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
  }
  return z;
}

inline double actGrad(Activation a, double activated) {
  switch (a) {
    case Activation::relu: return activated > 0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - activated * activated;
    case Activation::sigmoid: return activated * (1.0 - activated);
  }
  return 1.0;
}

struct ParamGrads {
  std::vector<Eigen::MatrixXd> dw;
  std::vector<Eigen::VectorXd> db;
};

/// Forward + optional backward of the R^2 loss on a standardized batch.
/// `dropout_rng` non-null enables inverted dropout on hidden activations.
inline double lossAndGradient(const TrainedModel& model,
                              const Eigen::MatrixXd& x_std,
                              const Eigen::VectorXd& y, ParamGrads* grads,
                              Rng* dropout_rng) {
  const int n = static_cast<int>(x_std.rows());
  const int n_layers = static_cast<int>(model.weights.size());
  const Activation a = model.config.activation;
  const double keep = 1.0 - model.config.dropout_rate;

  std::vector<Eigen::MatrixXd> acts(n_layers + 1);       // layer inputs
  std::vector<Eigen::MatrixXd> activated(n_layers + 1);  // pre-dropout
  std::vector<Eigen::MatrixXd> masks(n_layers);
  acts[0] = x_std;
  for (int l = 0; l < n_layers; ++l) {
    Eigen::MatrixXd z = acts[l] * model.weights[l].transpose();
    z.rowwise() += model.biases[l].transpose();
    bool hidden = l + 1 < n_layers;
    if (hidden)
      for (Eigen::Index i = 0; i < z.size(); ++i)
        z.data()[i] = act(a, z.data()[i]);
    activated[l + 1] = z;
    if (hidden && dropout_rng && model.config.dropout_rate > 0) {
      std::bernoulli_distribution keep_dist(keep);
      masks[l] = Eigen::MatrixXd(z.rows(), z.cols());
      for (Eigen::Index c = 0; c < z.cols(); ++c)
        for (Eigen::Index r = 0; r < z.rows(); ++r)
          masks[l](r, c) = keep_dist(*dropout_rng) ? 1.0 / keep : 0.0;
      z = z.cwiseProduct(masks[l]);
    }
    acts[l + 1] = std::move(z);
  }
  Eigen::VectorXd yhat = acts[n_layers].col(0);

  double mean = y.mean();
  double ss_tot = (y.array() - mean).square().sum();
  if (ss_tot <= 0)
    throw Error(ErrorKind::undefined_metric, "constant outcomes in training");
  double ss_res = (y - yhat).squaredNorm();
  double loss = 100.0 * ss_res / ss_tot;

  if (grads) {
    grads->dw.resize(n_layers);
    grads->db.resize(n_layers);
    // dL/dyhat = 100 * 2 (yhat - y) / ss_tot
    Eigen::MatrixXd delta = (200.0 / ss_tot) * (yhat - y);
    for (int l = n_layers - 1; l >= 0; --l) {
      grads->dw[l] = delta.transpose() * acts[l];
      grads->db[l] = delta.colwise().sum();
      if (l > 0) {
        Eigen::MatrixXd prev = delta * model.weights[l];
        if (dropout_rng && model.config.dropout_rate > 0)
          prev = prev.cwiseProduct(masks[l - 1]);
        // activation gradient from the pre-dropout activations
        for (Eigen::Index i = 0; i < prev.size(); ++i)
          prev.data()[i] *= actGrad(a, activated[l].data()[i]);
        delta = std::move(prev);
      }
    }
  }
  (void)n;
  return loss;
}

inline Eigen::MatrixXd standardize(const TrainedModel& model,
                                   const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out = x;
  out.rowwise() -= model.feature_mean.transpose();
  out.array().rowwise() /= model.feature_scale.transpose().array();
  return out;
}

}  // namespace detail

/// Full-batch Adam on the R^2 loss; deterministic for a fixed config.
inline TrainedModel trainModel(const Eigen::MatrixXd& x,
                               const Eigen::VectorXd& y,
                               const ModelConfig& config) {
  config.validate();
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  if (n < 4) throw Error(ErrorKind::parameter, "training needs >= 4 samples");
  if (y.size() != n) throw Error(ErrorKind::shape, "outcome length mismatch");

  TrainedModel model;
  model.config = config;
  model.input_dim = d;
  model.feature_mean = x.colwise().mean();
  model.feature_scale.resize(d);
  for (int c = 0; c < d; ++c) {
    double var =
        (x.col(c).array() - model.feature_mean[c]).square().sum() / n;
    double sd = std::sqrt(var);
    model.feature_scale[c] = sd > 1e-12 ? sd : 1.0;
  }

  // layer sizes: d -> hidden^n_layers -> 1; seeded scaled-uniform fan-in init
  std::vector<int> sizes{d};
  for (int l = 0; l < config.n_layers; ++l)
    sizes.push_back(config.neurons_per_layer);
  sizes.push_back(1);
  Rng rng(config.weight_seed);
  for (size_t l = 0; l + 1 < sizes.size(); ++l) {
    double bound = std::sqrt(6.0 / sizes[l]);
    std::uniform_real_distribution<double> u(-bound, bound);
    Eigen::MatrixXd w(sizes[l + 1], sizes[l]);
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = u(rng);
    model.weights.push_back(std::move(w));
    model.biases.push_back(Eigen::VectorXd::Zero(sizes[l + 1]));
  }

  Eigen::MatrixXd x_std = detail::standardize(model, x);
  // Adam state
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;
  for (const auto& w : model.weights) {
    mw.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    vw.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  }
  for (const auto& b : model.biases) {
    mb.push_back(Eigen::VectorXd::Zero(b.size()));
    vb.push_back(Eigen::VectorXd::Zero(b.size()));
  }
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Rng dropout_rng(deriveSeed(config.weight_seed, "dropout"));

  detail::ParamGrads grads;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss = detail::lossAndGradient(
        model, x_std, y, &grads,
        config.dropout_rate > 0 ? &dropout_rng : nullptr);
    if (!std::isfinite(loss))
      throw Error(ErrorKind::training,
                  strCat("training diverged at epoch ", epoch));
    model.history.push_back(loss);
    double bc1 = 1.0 - std::pow(beta1, epoch);
    double bc2 = 1.0 - std::pow(beta2, epoch);
    for (size_t l = 0; l < model.weights.size(); ++l) {
      if (!grads.dw[l].allFinite() || !grads.db[l].allFinite())
        throw Error(ErrorKind::training,
                    strCat("non-finite gradient at epoch ", epoch));
      mw[l] = beta1 * mw[l] + (1 - beta1) * grads.dw[l];
      vw[l] = beta2 * vw[l] +
              (1 - beta2) * grads.dw[l].cwiseProduct(grads.dw[l]);
      mb[l] = beta1 * mb[l] + (1 - beta1) * grads.db[l];
      vb[l] = beta2 * vb[l] +
              (1 - beta2) * grads.db[l].cwiseProduct(grads.db[l]);
      model.weights[l] -=
          (config.learning_rate * (mw[l] / bc1).array() /
           ((vw[l] / bc2).array().sqrt() + eps))
              .matrix();
      model.biases[l] -= (config.learning_rate * (mb[l] / bc1).array() /
                          ((vb[l] / bc2).array().sqrt() + eps))
                             .matrix();
    }
  }
  model.validate();
  return model;
}

/// Deterministic forward pass with dropout disabled.
inline std::vector<double> predict(const TrainedModel& model,
                                   const Eigen::MatrixXd& x) {
  if (x.cols() != model.input_dim)
    throw Error(ErrorKind::shape, "feature dimension mismatch");
  Eigen::MatrixXd a = detail::standardize(model, x);
  for (size_t l = 0; l < model.weights.size(); ++l) {
    Eigen::MatrixXd z = a * model.weights[l].transpose();
    z.rowwise() += model.biases[l].transpose();
    if (l + 1 < model.weights.size())
      for (Eigen::Index i = 0; i < z.size(); ++i)
        z.data()[i] = detail::act(model.config.activation, z.data()[i]);
    a = std::move(z);
  }
  std::vector<double> out(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) out[i] = a(i, 0);
  return out;
}

inline EvalResult evaluate(const TrainedModel& model, const Eigen::MatrixXd& x,
                           const Eigen::VectorXd& y) {
  std::vector<double> yhat = predict(model, x);
  std::vector<double> yv(y.data(), y.data() + y.size());
  EvalResult out;
  out.n = static_cast<int>(y.size());
  out.r2 = r2Score(yv, yhat);
  out.rmse = rmse(yv, yhat);
  return out;
}

}  // namespace warpaug

#endif  // WARPAUG_MLP_HPP
