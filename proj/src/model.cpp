#include "flsim/model.hpp"

#include <cmath>
#include <numeric>

#include "flsim/rng.hpp"

namespace flsim {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;

struct LayerOffsets {
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
};

LayerOffsets offsets(const ModelSpec& s) {
  LayerOffsets o;
  const std::size_t in = s.input_dim, h = s.hidden_dim, c = s.num_classes;
  if (h == 0) {
    o.w2 = 0;
    o.b2 = c * in;
  } else {
    o.w1 = 0;
    o.b1 = h * in;
    o.w2 = o.b1 + h;
    o.b2 = o.w2 + c * h;
  }
  return o;
}

void check_shapes(const ParamVector& params, const Eigen::MatrixXd& features,
                  const ModelSpec& spec) {
  spec.validate();
  require(static_cast<std::size_t>(params.size()) == spec.param_count(),
          "parameter vector length " + std::to_string(params.size()) + " != model size " +
              std::to_string(spec.param_count()));
  require(features.cols() == spec.input_dim,
          "feature width " + std::to_string(features.cols()) + " != input_dim " +
              std::to_string(spec.input_dim));
}

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation a) {
  if (a == Activation::kRelu) return z.cwiseMax(0.0);
  return z.array().tanh().matrix();
}

struct Forward {
  Eigen::MatrixXd hidden_pre;  // empty for logistic
  Eigen::MatrixXd hidden;      // features for logistic
  Eigen::MatrixXd logits;
};

Forward forward(const ParamVector& p, const Eigen::MatrixXd& x, const ModelSpec& s) {
  const auto o = offsets(s);
  const int c = s.num_classes;
  Forward f;
  if (s.hidden_dim == 0) {
    ConstMatMap w(p.data() + o.w2, c, s.input_dim);
    Eigen::Map<const Eigen::VectorXd> b(p.data() + o.b2, c);
    f.logits = x * w.transpose();
    f.logits.rowwise() += b.transpose();
    return f;
  }
  const int h = s.hidden_dim;
  ConstMatMap w1(p.data() + o.w1, h, s.input_dim);
  Eigen::Map<const Eigen::VectorXd> b1(p.data() + o.b1, h);
  ConstMatMap w2(p.data() + o.w2, c, h);
  Eigen::Map<const Eigen::VectorXd> b2(p.data() + o.b2, c);
  f.hidden_pre = x * w1.transpose();
  f.hidden_pre.rowwise() += b1.transpose();
  f.hidden = activate(f.hidden_pre, s.activation);
  f.logits = f.hidden * w2.transpose();
  f.logits.rowwise() += b2.transpose();
  return f;
}

void check_labels(const Batch& batch, const ModelSpec& spec) {
  require(static_cast<std::size_t>(batch.features.rows()) == batch.labels.size(),
          "batch has " + std::to_string(batch.features.rows()) + " rows but " +
              std::to_string(batch.labels.size()) + " labels");
  require(!batch.labels.empty(), "empty batch");
  for (int y : batch.labels)
    require(y >= 0 && y < spec.num_classes, "label " + std::to_string(y) + " out of range");
}

// Max-shifted softmax probabilities; returns mean cross-entropy.
double softmax_xent(const Eigen::MatrixXd& logits, const std::vector<int>& labels,
                    Eigen::MatrixXd* probs) {
  const Eigen::Index n = logits.rows();
  double total = 0.0;
  if (probs) probs->resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp().matrix();
    const double z = e.sum();
    total += std::log(z) - (logits(i, labels[i]) - mx);
    if (probs) probs->row(i) = e / z;
  }
  return total / static_cast<double>(n);
}

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw Error("unknown activation '" + name + "'");
}

std::size_t ModelSpec::param_count() const {
  const std::size_t in = input_dim, h = hidden_dim, c = num_classes;
  if (h == 0) return c * in + c;
  return h * in + h + c * h + c;
}

void ModelSpec::validate() const {
  require(input_dim >= 1, "input_dim must be >= 1");
  require(hidden_dim >= 0, "hidden_dim must be >= 0");
  require(num_classes >= 2, "num_classes must be >= 2");
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector p = ParamVector::Zero(static_cast<Eigen::Index>(spec.param_count()));
  Rng rng(seed);
  auto fill = [&](std::size_t start, int fan_out, int fan_in) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    const std::size_t count = static_cast<std::size_t>(fan_out) * fan_in;
    for (std::size_t i = 0; i < count; ++i) p[start + i] = (2.0 * uniform01(rng) - 1.0) * limit;
  };
  const auto o = offsets(spec);
  if (spec.hidden_dim == 0) {
    fill(o.w2, spec.num_classes, spec.input_dim);
  } else {
    fill(o.w1, spec.hidden_dim, spec.input_dim);
    fill(o.w2, spec.num_classes, spec.hidden_dim);
  }
  return p;
}

Eigen::MatrixXd logits(const ParamVector& params, const Eigen::MatrixXd& features,
                       const ModelSpec& spec) {
  check_shapes(params, features, spec);
  return forward(params, features, spec).logits;
}

double loss(const ParamVector& params, const Batch& batch, const ModelSpec& spec) {
  check_shapes(params, batch.features, spec);
  check_labels(batch, spec);
  return softmax_xent(forward(params, batch.features, spec).logits, batch.labels, nullptr);
}

LossGrad loss_and_grad(const ParamVector& params, const Batch& batch, const ModelSpec& spec) {
  check_shapes(params, batch.features, spec);
  check_labels(batch, spec);
  const Forward f = forward(params, batch.features, spec);
  Eigen::MatrixXd probs;
  LossGrad out;
  out.loss = softmax_xent(f.logits, batch.labels, &probs);

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  Eigen::MatrixXd dlogits = probs;
  for (std::size_t i = 0; i < batch.size(); ++i) dlogits(i, batch.labels[i]) -= 1.0;
  dlogits *= inv_n;

  out.grad = ParamVector::Zero(params.size());
  const auto o = offsets(spec);
  const int c = spec.num_classes;
  if (spec.hidden_dim == 0) {
    MatMap gw(out.grad.data() + o.w2, c, spec.input_dim);
    gw = dlogits.transpose() * batch.features;
    out.grad.segment(o.b2, c) = dlogits.colwise().sum().transpose();
    return out;
  }
  const int h = spec.hidden_dim;
  ConstMatMap w2(params.data() + o.w2, c, h);
  MatMap gw2(out.grad.data() + o.w2, c, h);
  gw2 = dlogits.transpose() * f.hidden;
  out.grad.segment(o.b2, c) = dlogits.colwise().sum().transpose();

  Eigen::MatrixXd dhidden = dlogits * w2;
  if (spec.activation == Activation::kRelu) {
    dhidden = dhidden.cwiseProduct((f.hidden_pre.array() > 0.0).cast<double>().matrix());
  } else {
    dhidden = dhidden.cwiseProduct((1.0 - f.hidden.array().square()).matrix());
  }
  MatMap gw1(out.grad.data() + o.w1, h, spec.input_dim);
  gw1 = dhidden.transpose() * batch.features;
  out.grad.segment(o.b1, h) = dhidden.colwise().sum().transpose();
  return out;
}

std::vector<int> predict(const ParamVector& params, const Eigen::MatrixXd& features,
                         const ModelSpec& spec) {
  const Eigen::MatrixXd z = logits(params, features, spec);
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    int best = 0;
    for (Eigen::Index k = 1; k < z.cols(); ++k)
      if (z(i, k) > z(i, best)) best = static_cast<int>(k);
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

Batch gather(const Batch& batch, std::span<const int> rows) {
  Batch out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), batch.features.cols());
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = batch.features.row(rows[i]);
    out.labels[i] = batch.labels[static_cast<std::size_t>(rows[i])];
  }
  return out;
}

ParamVector sgd_local_train(const ParamVector& params, const Batch& train, const SgdOptions& opts,
                            std::uint64_t seed, const ModelSpec& spec) {
  require(train.size() > 0, "cannot train on an empty shard");
  require(opts.epochs >= 1, "epochs must be >= 1");
  require(opts.lr >= 0.0, "learning rate must be non-negative");
  require(opts.batch_size >= 1, "batch_size must be >= 1");
  ParamVector p = params;
  if (opts.lr == 0.0) return p;

  Rng rng(seed);
  std::vector<int> order(train.size());
  const std::size_t bs = static_cast<std::size_t>(opts.batch_size);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t len = std::min(bs, order.size() - start);
      const Batch mb = gather(train, std::span<const int>(order).subspan(start, len));
      p -= opts.lr * loss_and_grad(p, mb, spec).grad;
    }
  }
  return p;
}

}  // namespace flsim
