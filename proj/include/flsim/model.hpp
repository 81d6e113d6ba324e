#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flsim/types.hpp"

namespace flsim {

enum class Activation { kRelu, kTanh };

Activation parse_activation(const std::string& name);

/// Logistic regression (hidden_dim == 0) or a one-hidden-layer MLP.
///
/// Flat parameter layout, all weight matrices row-major:
///   hidden_dim == 0:  W[C x in], b[C]
///   hidden_dim  > 0:  W1[h x in], b1[h], W2[C x h], b2[C]
struct ModelSpec {
  int input_dim = 1;
  int hidden_dim = 0;
  int num_classes = 2;
  Activation activation = Activation::kRelu;

  std::size_t param_count() const;
  void validate() const;
};

struct Batch {
  Eigen::MatrixXd features;  // rows = samples
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// Xavier-uniform weights, zero biases.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

/// Mean softmax cross-entropy and its gradient.
LossGrad loss_and_grad(const ParamVector& params, const Batch& batch, const ModelSpec& spec);

/// Mean cross-entropy only (no gradient).
double loss(const ParamVector& params, const Batch& batch, const ModelSpec& spec);

/// Class scores (logits), one row per sample.
Eigen::MatrixXd logits(const ParamVector& params, const Eigen::MatrixXd& features,
                       const ModelSpec& spec);

/// Argmax class per row; ties go to the lowest class index.
std::vector<int> predict(const ParamVector& params, const Eigen::MatrixXd& features,
                         const ModelSpec& spec);

/// Rows of `batch` selected by `rows`.
Batch gather(const Batch& batch, std::span<const int> rows);

struct SgdOptions {
  int epochs = 1;
  double lr = 0.01;
  int batch_size = 32;
};

/// Shuffled mini-batch SGD. Each epoch draws a fresh Fisher-Yates permutation
/// from a stream seeded by `seed`; the last partial batch is kept.
ParamVector sgd_local_train(const ParamVector& params, const Batch& train, const SgdOptions& opts,
                            std::uint64_t seed, const ModelSpec& spec);

}  // namespace flsim
