#include "nowcast/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "nowcast/csv.hpp"

namespace nowcast::synth {

void SynthConfig::validate() const {
  if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
  if (!(gen_lr > 0.0) || !(disc_lr > 0.0)) throw std::invalid_argument("learning rates must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (checkpoint_every < 1) throw std::invalid_argument("checkpoint_every must be >= 1");
  if (max_epochs < checkpoint_every) {
    throw std::invalid_argument("max_epochs must be >= checkpoint_every");
  }
  if (!(gumbel_tau > 0.0)) throw std::invalid_argument("gumbel_tau must be > 0");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0) {
    throw std::invalid_argument("adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be > 0");
  for (const int dim : hidden_dims) {
    if (dim < 1) throw std::invalid_argument("hidden dims must be >= 1");
  }
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

Encoding make_encoding(const FeatureSchema& schema) {
  Encoding encoding;
  int offset = 0;
  for (int j = 0; j < schema.size(); ++j) {
    const auto& spec = schema.feature(j);
    Encoding::Block block;
    block.feature = j;
    block.kind = spec.kind;
    block.offset = offset;
    block.width = spec.kind == FeatureKind::kNumeric ? 1 : static_cast<int>(spec.levels.size());
    offset += block.width;
    encoding.blocks.push_back(block);
  }
  encoding.width = offset;
  return encoding;
}

Eigen::MatrixXd encode(const TabularDataset& data) {
  data.validate();
  const Encoding encoding = make_encoding(data.schema);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(data.n_rows(), encoding.width);
  for (const auto& block : encoding.blocks) {
    for (Eigen::Index i = 0; i < data.n_rows(); ++i) {
      const double v = data.rows(i, block.feature);
      if (block.kind == FeatureKind::kNumeric) {
        if (v < 0.0 || v > 1.0) {
          throw std::invalid_argument("encode: numeric feature '" +
                                      data.schema.feature(block.feature).name +
                                      "' outside [0, 1] at row " + std::to_string(i) +
                                      " (min-max normalize first)");
        }
        out(i, block.offset) = v;
      } else {
        out(i, block.offset + static_cast<int>(v)) = 1.0;
      }
    }
  }
  return out;
}

TabularDataset decode(const Eigen::Ref<const Eigen::MatrixXd>& encoded,
                      const FeatureSchema& schema) {
  const Encoding encoding = make_encoding(schema);
  if (encoded.cols() != encoding.width) {
    throw std::invalid_argument("decode: width mismatch");
  }
  TabularDataset data;
  data.schema = schema;
  data.rows.resize(encoded.rows(), schema.size());
  for (const auto& block : encoding.blocks) {
    for (Eigen::Index i = 0; i < encoded.rows(); ++i) {
      if (block.kind == FeatureKind::kNumeric) {
        data.rows(i, block.feature) = encoded(i, block.offset);
      } else {
        Eigen::Index argmax = 0;
        encoded.row(i).segment(block.offset, block.width).maxCoeff(&argmax);
        data.rows(i, block.feature) = static_cast<double>(argmax);
      }
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

namespace {

NetworkParams make_network(const std::vector<int>& hidden_dims, int in_width, int out_width,
                           Activation hidden_activation) {
  NetworkParams params;
  int width = in_width;
  for (const int hidden : hidden_dims) {
    params.weights.emplace_back(Eigen::MatrixXd::Zero(width, hidden));
    params.biases.emplace_back(Eigen::RowVectorXd::Zero(hidden));
    params.activations.push_back(hidden_activation);
    width = hidden;
  }
  params.weights.emplace_back(Eigen::MatrixXd::Zero(width, out_width));
  params.biases.emplace_back(Eigen::RowVectorXd::Zero(out_width));
  params.activations.push_back(Activation::kLinear);
  return params;
}

constexpr double kLeakySlope = 0.2;

Eigen::MatrixXd apply_activation(const Eigen::MatrixXd& pre, Activation activation) {
  switch (activation) {
    case Activation::kLinear:
      return pre;
    case Activation::kRelu:
      return pre.cwiseMax(0.0);
    case Activation::kLeakyRelu:
      return pre.cwiseMax(kLeakySlope * pre);
  }
  return pre;
}

Eigen::MatrixXd activation_derivative(const Eigen::MatrixXd& pre, Activation activation) {
  switch (activation) {
    case Activation::kLinear:
      return Eigen::MatrixXd::Ones(pre.rows(), pre.cols());
    case Activation::kRelu:
      return (pre.array() > 0.0).cast<double>();
    case Activation::kLeakyRelu:
      return (pre.array() > 0.0).select(Eigen::MatrixXd::Ones(pre.rows(), pre.cols()),
                                        Eigen::MatrixXd::Constant(pre.rows(), pre.cols(),
                                                                  kLeakySlope));
  }
  return Eigen::MatrixXd::Ones(pre.rows(), pre.cols());
}

struct ForwardCache {
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> pre;
  std::vector<Eigen::MatrixXd> post;
};

Eigen::MatrixXd forward(const NetworkParams& params, const Eigen::MatrixXd& input,
                        ForwardCache* cache) {
  Eigen::MatrixXd current = input;
  if (cache != nullptr) {
    cache->input = input;
    cache->pre.clear();
    cache->post.clear();
  }
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    Eigen::MatrixXd pre = (current * params.weights[l]).rowwise() + params.biases[l];
    Eigen::MatrixXd post = apply_activation(pre, params.activations[l]);
    if (cache != nullptr) {
      cache->pre.push_back(pre);
      cache->post.push_back(post);
    }
    current = std::move(post);
  }
  return current;
}

/// Backward pass; d_output is dL/d(final post-activation). Returns
/// dL/d(input) and fills grads.
Eigen::MatrixXd backward(const NetworkParams& params, const ForwardCache& cache,
                         const Eigen::MatrixXd& d_output, Gradients* grads) {
  if (grads != nullptr) {
    grads->weights.assign(params.num_layers(), {});
    grads->biases.assign(params.num_layers(), {});
  }
  Eigen::MatrixXd d_post = d_output;
  for (std::size_t l = params.num_layers(); l-- > 0;) {
    const Eigen::MatrixXd d_pre =
        d_post.cwiseProduct(activation_derivative(cache.pre[l], params.activations[l]));
    const Eigen::MatrixXd& below = l == 0 ? cache.input : cache.post[l - 1];
    if (grads != nullptr) {
      grads->weights[l] = below.transpose() * d_pre;
      grads->biases[l] = d_pre.colwise().sum();
    }
    d_post = d_pre * params.weights[l].transpose();
  }
  return d_post;
}

}  // namespace

NetworkParams generator_architecture(const SynthConfig& config, int encoded_width,
                                     int num_classes) {
  return make_network(config.hidden_dims, config.latent_dim + num_classes, encoded_width,
                      Activation::kRelu);
}

NetworkParams discriminator_architecture(const SynthConfig& config, int encoded_width,
                                         int num_classes) {
  return make_network(config.hidden_dims, encoded_width + num_classes, 1,
                      Activation::kLeakyRelu);
}

void randomize(NetworkParams& params, Rng& rng) {
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    const double fan_in = static_cast<double>(params.weights[l].rows());
    const double scale = params.activations[l] == Activation::kLinear
                             ? std::sqrt(1.0 / fan_in)
                             : std::sqrt(2.0 / fan_in);
    // the last layer uses the downstream activation only through its heads;
    // a plain 1/sqrt(fan_in) scale keeps initial outputs near zero
    for (Eigen::Index i = 0; i < params.weights[l].rows(); ++i) {
      for (Eigen::Index j = 0; j < params.weights[l].cols(); ++j) {
        params.weights[l](i, j) = scale * rng.normal();
      }
    }
    params.biases[l].setZero();
  }
}

// ---------------------------------------------------------------------------
// Generator heads
// ---------------------------------------------------------------------------

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void softmax_rows_inplace(Eigen::Ref<Eigen::MatrixXd> block) {
  for (Eigen::Index i = 0; i < block.rows(); ++i) {
    const double max_v = block.row(i).maxCoeff();
    block.row(i) = (block.row(i).array() - max_v).exp();
    block.row(i) /= block.row(i).sum();
  }
}

/// Training head: numeric sigmoid, categorical Gumbel-softmax at tau.
Eigen::MatrixXd head_forward_train(const Eigen::MatrixXd& raw, const Encoding& encoding,
                                   const Eigen::MatrixXd& gumbel_noise, double tau) {
  Eigen::MatrixXd out(raw.rows(), raw.cols());
  for (const auto& block : encoding.blocks) {
    if (block.kind == FeatureKind::kNumeric) {
      for (Eigen::Index i = 0; i < raw.rows(); ++i) {
        out(i, block.offset) = sigmoid(raw(i, block.offset));
      }
    } else {
      out.middleCols(block.offset, block.width) =
          (raw.middleCols(block.offset, block.width) +
           gumbel_noise.middleCols(block.offset, block.width)) /
          tau;
      softmax_rows_inplace(out.middleCols(block.offset, block.width));
    }
  }
  return out;
}

/// d(loss)/d(raw) given d(loss)/d(head output).
Eigen::MatrixXd head_backward_train(const Eigen::MatrixXd& head_out, const Encoding& encoding,
                                    const Eigen::MatrixXd& d_out, double tau) {
  Eigen::MatrixXd d_raw = Eigen::MatrixXd::Zero(d_out.rows(), d_out.cols());
  for (const auto& block : encoding.blocks) {
    if (block.kind == FeatureKind::kNumeric) {
      for (Eigen::Index i = 0; i < d_out.rows(); ++i) {
        const double y = head_out(i, block.offset);
        d_raw(i, block.offset) = d_out(i, block.offset) * y * (1.0 - y);
      }
    } else {
      // softmax Jacobian at temperature tau: d_raw_j = y_j (d_j - sum_i d_i y_i) / tau
      for (Eigen::Index i = 0; i < d_out.rows(); ++i) {
        const auto y = head_out.row(i).segment(block.offset, block.width).array();
        const auto d = d_out.row(i).segment(block.offset, block.width).array();
        const double dot = (y * d).sum();
        d_raw.row(i).segment(block.offset, block.width) = (y * (d - dot) / tau).matrix();
      }
    }
  }
  return d_raw;
}

/// Sampling head: numeric sigmoid clamped into the open interval,
/// categorical argmax one-hot.
Eigen::MatrixXd head_forward_sample(const Eigen::MatrixXd& raw, const Encoding& encoding) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(raw.rows(), raw.cols());
  constexpr double kOpenEps = 1e-12;
  for (const auto& block : encoding.blocks) {
    if (block.kind == FeatureKind::kNumeric) {
      for (Eigen::Index i = 0; i < raw.rows(); ++i) {
        out(i, block.offset) = std::clamp(sigmoid(raw(i, block.offset)), kOpenEps, 1.0 - kOpenEps);
      }
    } else {
      for (Eigen::Index i = 0; i < raw.rows(); ++i) {
        Eigen::Index argmax = 0;
        raw.row(i).segment(block.offset, block.width).maxCoeff(&argmax);
        out(i, block.offset + argmax) = 1.0;
      }
    }
  }
  return out;
}

Eigen::MatrixXd draw_gumbel(Rng& rng, Eigen::Index rows, const Encoding& encoding) {
  Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(rows, encoding.width);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (const auto& block : encoding.blocks) {
      if (block.kind != FeatureKind::kCategorical) continue;
      for (int j = 0; j < block.width; ++j) noise(i, block.offset + j) = rng.gumbel();
    }
  }
  return noise;
}

Eigen::MatrixXd draw_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd z(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) z(i, j) = rng.normal();
  }
  return z;
}

Eigen::MatrixXd concat_cols(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

}  // namespace

Eigen::RowVectorXd generator_forward(const NetworkParams& generator, const Encoding& encoding,
                                     const Eigen::Ref<const Eigen::RowVectorXd>& z,
                                     const Eigen::Ref<const Eigen::RowVectorXd>& condition) {
  Eigen::MatrixXd input(1, z.size() + condition.size());
  input << z, condition;
  const Eigen::MatrixXd raw = forward(generator, input, nullptr);
  Eigen::RowVectorXd out(raw.cols());
  for (const auto& block : encoding.blocks) {
    if (block.kind == FeatureKind::kNumeric) {
      out[block.offset] = sigmoid(raw(0, block.offset));
    } else {
      Eigen::RowVectorXd probs = raw.row(0).segment(block.offset, block.width);
      const double max_v = probs.maxCoeff();
      probs = (probs.array() - max_v).exp();
      probs /= probs.sum();
      out.segment(block.offset, block.width) = probs;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

AdamState AdamState::like(const NetworkParams& params) {
  AdamState state;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    state.m_weights.emplace_back(Eigen::MatrixXd::Zero(params.weights[l].rows(),
                                                       params.weights[l].cols()));
    state.v_weights.emplace_back(Eigen::MatrixXd::Zero(params.weights[l].rows(),
                                                       params.weights[l].cols()));
    state.m_biases.emplace_back(Eigen::RowVectorXd::Zero(params.biases[l].size()));
    state.v_biases.emplace_back(Eigen::RowVectorXd::Zero(params.biases[l].size()));
  }
  return state;
}

void adam_step(NetworkParams& params, const Gradients& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  if (grads.weights.size() != params.num_layers() || grads.biases.size() != params.num_layers()) {
    throw std::invalid_argument("adam_step: gradient shape mismatch");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = beta1 * m + (1.0 - beta1) * g;
    v = (beta2 * v.array() + (1.0 - beta2) * g.array().square()).matrix();
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    if (!grads.weights[l].allFinite() || !grads.biases[l].allFinite()) {
      throw std::runtime_error("adam_step: non-finite gradient in layer " + std::to_string(l));
    }
    update(params.weights[l], state.m_weights[l], state.v_weights[l], grads.weights[l]);
    update(params.biases[l], state.m_biases[l], state.v_biases[l], grads.biases[l]);
  }
}

// ---------------------------------------------------------------------------
// Losses (shared by training and the gradient check)
// ---------------------------------------------------------------------------

namespace {

struct DiscStep {
  double loss = 0.0;
  Gradients grads;
};

/// BCE on (real, cond) vs (generated, cond); gradients for the discriminator.
DiscStep disc_loss_and_grads(const NetworkParams& generator, const NetworkParams& discriminator,
                             const Encoding& encoding, const Eigen::MatrixXd& real_enc,
                             const Eigen::MatrixXd& cond, const Eigen::MatrixXd& z,
                             const Eigen::MatrixXd& gumbel, double tau) {
  const Eigen::MatrixXd raw = forward(generator, concat_cols(z, cond), nullptr);
  const Eigen::MatrixXd fake_enc = head_forward_train(raw, encoding, gumbel, tau);

  const Eigen::Index batch = real_enc.rows();
  Eigen::MatrixXd disc_in(2 * batch, real_enc.cols() + cond.cols());
  disc_in << concat_cols(real_enc, cond), concat_cols(fake_enc, cond);

  ForwardCache cache;
  const Eigen::MatrixXd logits = forward(discriminator, disc_in, &cache);

  DiscStep step;
  Eigen::MatrixXd d_logits(2 * batch, 1);
  const double scale = 1.0 / static_cast<double>(2 * batch);
  for (Eigen::Index i = 0; i < 2 * batch; ++i) {
    const double target = i < batch ? 1.0 : 0.0;
    step.loss += scale * (target > 0.5 ? softplus(-logits(i, 0)) : softplus(logits(i, 0)));
    d_logits(i, 0) = scale * (sigmoid(logits(i, 0)) - target);
  }
  backward(discriminator, cache, d_logits, &step.grads);
  return step;
}

struct GenStep {
  double loss = 0.0;
  Gradients grads;
};

/// Non-saturating generator loss through the frozen discriminator; gradients
/// flow back through the Gumbel-softmax relaxation into the generator.
GenStep gen_loss_and_grads(const NetworkParams& generator, const NetworkParams& discriminator,
                           const Encoding& encoding, const Eigen::MatrixXd& cond,
                           const Eigen::MatrixXd& z, const Eigen::MatrixXd& gumbel, double tau) {
  ForwardCache gen_cache;
  const Eigen::MatrixXd raw = forward(generator, concat_cols(z, cond), &gen_cache);
  const Eigen::MatrixXd fake_enc = head_forward_train(raw, encoding, gumbel, tau);

  ForwardCache disc_cache;
  const Eigen::MatrixXd logits =
      forward(discriminator, concat_cols(fake_enc, cond), &disc_cache);

  GenStep step;
  const Eigen::Index batch = z.rows();
  Eigen::MatrixXd d_logits(batch, 1);
  const double scale = 1.0 / static_cast<double>(batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    step.loss += scale * softplus(-logits(i, 0));
    d_logits(i, 0) = scale * (sigmoid(logits(i, 0)) - 1.0);
  }
  const Eigen::MatrixXd d_disc_in = backward(discriminator, disc_cache, d_logits, nullptr);
  const Eigen::MatrixXd d_fake = d_disc_in.leftCols(fake_enc.cols());
  const Eigen::MatrixXd d_raw = head_backward_train(fake_enc, encoding, d_fake, tau);
  backward(generator, gen_cache, d_raw, &step.grads);
  return step;
}

double disc_loss_only(const NetworkParams& generator, const NetworkParams& discriminator,
                      const Encoding& encoding, const Eigen::MatrixXd& real_enc,
                      const Eigen::MatrixXd& cond, const Eigen::MatrixXd& z,
                      const Eigen::MatrixXd& gumbel, double tau) {
  const Eigen::MatrixXd raw = forward(generator, concat_cols(z, cond), nullptr);
  const Eigen::MatrixXd fake_enc = head_forward_train(raw, encoding, gumbel, tau);
  const Eigen::Index batch = real_enc.rows();
  Eigen::MatrixXd disc_in(2 * batch, real_enc.cols() + cond.cols());
  disc_in << concat_cols(real_enc, cond), concat_cols(fake_enc, cond);
  const Eigen::MatrixXd logits = forward(discriminator, disc_in, nullptr);
  double loss = 0.0;
  const double scale = 1.0 / static_cast<double>(2 * batch);
  for (Eigen::Index i = 0; i < 2 * batch; ++i) {
    loss += scale * (i < batch ? softplus(-logits(i, 0)) : softplus(logits(i, 0)));
  }
  return loss;
}

double gen_loss_only(const NetworkParams& generator, const NetworkParams& discriminator,
                     const Encoding& encoding, const Eigen::MatrixXd& cond,
                     const Eigen::MatrixXd& z, const Eigen::MatrixXd& gumbel, double tau) {
  const Eigen::MatrixXd raw = forward(generator, concat_cols(z, cond), nullptr);
  const Eigen::MatrixXd fake_enc = head_forward_train(raw, encoding, gumbel, tau);
  const Eigen::MatrixXd logits = forward(discriminator, concat_cols(fake_enc, cond), nullptr);
  double loss = 0.0;
  const double scale = 1.0 / static_cast<double>(z.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) loss += scale * softplus(-logits(i, 0));
  return loss;
}

Eigen::MatrixXd onehot_rows(const std::vector<int>& classes, int k) {
  Eigen::MatrixXd cond = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(classes.size()), k);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    cond(static_cast<Eigen::Index>(i), classes[i]) = 1.0;
  }
  return cond;
}

}  // namespace

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

std::vector<double> moving_average(const std::vector<double>& values, int window) {
  std::vector<double> out(values.size(), std::numeric_limits<double>::quiet_NaN());
  if (window < 1) throw std::invalid_argument("moving_average: window must be >= 1");
  double running = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    running += values[i];
    if (i + 1 >= static_cast<std::size_t>(window)) {
      if (i + 1 > static_cast<std::size_t>(window)) {
        running -= values[i - static_cast<std::size_t>(window)];
      }
      out[i] = running / window;
    }
  }
  return out;
}

FitResult fit_with_snapshots(const TabularDataset& data, int num_classes,
                             const SynthConfig& config, const std::vector<int>& snapshot_epochs,
                             const std::string& checkpoint_dir) {
  config.validate();
  data.validate();
  if (!data.has_labels()) throw std::invalid_argument("fit: dataset must carry labels");
  if (num_classes < 1) throw std::invalid_argument("fit: num_classes must be >= 1");

  std::vector<std::vector<int>> class_rows(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    const int y = data.labels[i];
    if (y < 0 || y >= num_classes) throw std::invalid_argument("fit: label outside [0, k)");
    class_rows[static_cast<std::size_t>(y)].push_back(static_cast<int>(i));
  }
  for (int c = 0; c < num_classes; ++c) {
    if (class_rows[static_cast<std::size_t>(c)].empty()) {
      throw std::invalid_argument("fit: class " + std::to_string(c) + " has no rows");
    }
  }

  for (const int epoch : snapshot_epochs) {
    if (epoch < 1 || epoch > config.max_epochs) {
      throw std::invalid_argument("fit: snapshot epoch " + std::to_string(epoch) +
                                  " outside [1, max_epochs]");
    }
  }

  const Encoding encoding = make_encoding(data.schema);
  const Eigen::MatrixXd encoded = encode(data);

  SynthesizerModel model;
  model.schema = data.schema;
  model.encoding = encoding;
  model.num_classes = num_classes;
  model.config = config;
  model.generator = generator_architecture(config, encoding.width, num_classes);
  model.discriminator = discriminator_architecture(config, encoding.width, num_classes);
  {
    Rng init_rng(Rng::derive(config.seed, 0xA11));
    randomize(model.generator, init_rng);
    randomize(model.discriminator, init_rng);
  }
  AdamState gen_state = AdamState::like(model.generator);
  AdamState disc_state = AdamState::like(model.discriminator);

  Rng rng(Rng::derive(config.seed, 0xBA7C4));
  const Eigen::Index batch = config.batch_size;
  const auto batches_per_epoch = static_cast<int>(
      (data.n_rows() + batch - 1) / batch);

  auto draw_batch = [&](Eigen::MatrixXd& cond, Eigen::MatrixXd& real_enc, bool with_real) {
    // training-by-sampling: condition class first, then a real row of that class
    std::vector<int> classes(static_cast<std::size_t>(batch));
    for (auto& c : classes) c = static_cast<int>(rng.uniform_int(0, num_classes - 1));
    cond = onehot_rows(classes, num_classes);
    if (with_real) {
      real_enc.resize(batch, encoding.width);
      for (Eigen::Index i = 0; i < batch; ++i) {
        const auto& rows = class_rows[static_cast<std::size_t>(classes[static_cast<std::size_t>(i)])];
        const auto pick = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(rows.size()) - 1));
        real_enc.row(i) = encoded.row(rows[pick]);
      }
    }
  };

  FitResult result;
  std::size_t next_snapshot = 0;
  std::vector<int> snapshots = snapshot_epochs;
  std::sort(snapshots.begin(), snapshots.end());

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    double epoch_disc = 0.0;
    double epoch_gen = 0.0;
    for (int b = 0; b < batches_per_epoch; ++b) {
      Eigen::MatrixXd cond;
      Eigen::MatrixXd real_enc;
      draw_batch(cond, real_enc, true);
      Eigen::MatrixXd z = draw_normal(rng, batch, config.latent_dim);
      Eigen::MatrixXd gumbel = draw_gumbel(rng, batch, encoding);
      const DiscStep disc = disc_loss_and_grads(model.generator, model.discriminator, encoding,
                                                real_enc, cond, z, gumbel, config.gumbel_tau);
      if (!std::isfinite(disc.loss)) {
        throw DivergenceError("discriminator loss diverged at epoch " + std::to_string(epoch),
                              model.log);
      }
      adam_step(model.discriminator, disc.grads, disc_state, config.disc_lr, config.adam_beta1,
                config.adam_beta2, config.adam_eps);

      draw_batch(cond, real_enc, false);
      z = draw_normal(rng, batch, config.latent_dim);
      gumbel = draw_gumbel(rng, batch, encoding);
      const GenStep gen = gen_loss_and_grads(model.generator, model.discriminator, encoding, cond,
                                             z, gumbel, config.gumbel_tau);
      if (!std::isfinite(gen.loss)) {
        throw DivergenceError("generator loss diverged at epoch " + std::to_string(epoch),
                              model.log);
      }
      adam_step(model.generator, gen.grads, gen_state, config.gen_lr, config.adam_beta1,
                config.adam_beta2, config.adam_eps);

      epoch_disc += disc.loss;
      epoch_gen += gen.loss;
    }
    model.log.disc_loss.push_back(epoch_disc / batches_per_epoch);
    model.log.gen_loss.push_back(epoch_gen / batches_per_epoch);

    while (next_snapshot < snapshots.size() && snapshots[next_snapshot] == epoch) {
      Checkpoint checkpoint;
      checkpoint.epoch = epoch;
      checkpoint.model = model;  // params and log up to this epoch
      if (!checkpoint_dir.empty()) {
        std::string name = std::to_string(epoch);
        name.insert(0, name.size() < 4 ? 4 - name.size() : 0, '0');
        checkpoint.path = checkpoint_dir + "/synth_epoch_" + name + ".json";
        save_model(checkpoint.path, checkpoint.model);
      }
      result.checkpoints.push_back(std::move(checkpoint));
      ++next_snapshot;
    }
  }
  result.model = std::move(model);
  return result;
}

FitResult fit(const TabularDataset& data, int num_classes, const SynthConfig& config,
              const std::string& checkpoint_dir) {
  std::vector<int> snapshots;
  for (int epoch = config.checkpoint_every; epoch <= config.max_epochs;
       epoch += config.checkpoint_every) {
    snapshots.push_back(epoch);
  }
  return fit_with_snapshots(data, num_classes, config, snapshots, checkpoint_dir);
}

TabularDataset sample(const SynthesizerModel& model, int n, const std::vector<double>& class_ratios,
                      std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
  if (static_cast<int>(class_ratios.size()) != model.num_classes) {
    throw std::invalid_argument("sample: ratio count must equal the class count");
  }
  const std::vector<int> counts = largest_remainder_counts(n, class_ratios);

  Rng rng(Rng::derive(seed, 0x5A3));
  Eigen::MatrixXd encoded(n, model.encoding.width);
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(n));
  Eigen::Index row = 0;
  for (int c = 0; c < model.num_classes; ++c) {
    const int count = counts[static_cast<std::size_t>(c)];
    if (count == 0) continue;
    const Eigen::MatrixXd z = draw_normal(rng, count, model.config.latent_dim);
    const Eigen::MatrixXd cond = onehot_rows(std::vector<int>(static_cast<std::size_t>(count), c),
                                             model.num_classes);
    const Eigen::MatrixXd raw = forward(model.generator, concat_cols(z, cond), nullptr);
    encoded.middleRows(row, count) = head_forward_sample(raw, model.encoding);
    labels.insert(labels.end(), static_cast<std::size_t>(count), c);
    row += count;
  }
  TabularDataset out = decode(encoded, model.schema);
  out.labels = std::move(labels);
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

namespace {

// relative below the typical gradient scale, absolute beneath it; keeps the
// finite-difference rounding floor from dominating near-zero coordinates
double relative_error(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-4);
}

template <typename LossFn>
double max_fd_error(NetworkParams& params, const Gradients& analytic, const LossFn& loss) {
  constexpr double kStep = 1e-6;
  double worst = 0.0;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    for (Eigen::Index i = 0; i < params.weights[l].rows(); ++i) {
      for (Eigen::Index j = 0; j < params.weights[l].cols(); ++j) {
        double& p = params.weights[l](i, j);
        const double saved = p;
        p = saved + kStep;
        const double up = loss();
        p = saved - kStep;
        const double down = loss();
        p = saved;
        worst = std::max(worst, relative_error(analytic.weights[l](i, j),
                                               (up - down) / (2.0 * kStep)));
      }
    }
    for (Eigen::Index j = 0; j < params.biases[l].size(); ++j) {
      double& p = params.biases[l][j];
      const double saved = p;
      p = saved + kStep;
      const double up = loss();
      p = saved - kStep;
      const double down = loss();
      p = saved;
      worst = std::max(worst,
                       relative_error(analytic.biases[l][j], (up - down) / (2.0 * kStep)));
    }
  }
  return worst;
}

}  // namespace

double gradient_check(const SynthConfig& config, const TabularDataset& fixture, int num_classes) {
  config.validate();
  fixture.validate();
  const Encoding encoding = make_encoding(fixture.schema);
  const Eigen::MatrixXd encoded = encode(fixture);
  const Eigen::Index batch = std::min<Eigen::Index>(8, fixture.n_rows());

  const Eigen::MatrixXd real_enc = encoded.topRows(batch);
  std::vector<int> classes(static_cast<std::size_t>(batch), 0);
  if (fixture.has_labels()) {
    for (Eigen::Index i = 0; i < batch; ++i) {
      classes[static_cast<std::size_t>(i)] =
          std::min(fixture.labels[static_cast<std::size_t>(i)], num_classes - 1);
    }
  }
  const Eigen::MatrixXd cond = onehot_rows(classes, num_classes);

  NetworkParams generator = generator_architecture(config, encoding.width, num_classes);
  NetworkParams discriminator = discriminator_architecture(config, encoding.width, num_classes);
  Rng init_rng(Rng::derive(config.seed, 0xC43C4));
  randomize(generator, init_rng);
  randomize(discriminator, init_rng);

  Rng noise_rng(Rng::derive(config.seed, 0x70153));
  const Eigen::MatrixXd z = draw_normal(noise_rng, batch, config.latent_dim);
  const Eigen::MatrixXd gumbel = draw_gumbel(noise_rng, batch, encoding);
  const double tau = config.gumbel_tau;

  const DiscStep disc = disc_loss_and_grads(generator, discriminator, encoding, real_enc, cond, z,
                                            gumbel, tau);
  const double disc_err = max_fd_error(discriminator, disc.grads, [&]() {
    return disc_loss_only(generator, discriminator, encoding, real_enc, cond, z, gumbel, tau);
  });

  const GenStep gen = gen_loss_and_grads(generator, discriminator, encoding, cond, z, gumbel, tau);
  const double gen_err = max_fd_error(generator, gen.grads, [&]() {
    return gen_loss_only(generator, discriminator, encoding, cond, z, gumbel, tau);
  });

  return std::max(disc_err, gen_err);
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return {};
  const auto cols = static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
  }
  return m;
}

json network_to_json(const NetworkParams& params) {
  json layers = json::array();
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    json layer;
    layer["weights"] = matrix_to_json(params.weights[l]);
    json bias = json::array();
    for (Eigen::Index j = 0; j < params.biases[l].size(); ++j) bias.push_back(params.biases[l][j]);
    layer["bias"] = std::move(bias);
    switch (params.activations[l]) {
      case Activation::kLinear: layer["activation"] = "linear"; break;
      case Activation::kRelu: layer["activation"] = "relu"; break;
      case Activation::kLeakyRelu: layer["activation"] = "leaky_relu"; break;
    }
    layers.push_back(std::move(layer));
  }
  return layers;
}

NetworkParams network_from_json(const json& j) {
  NetworkParams params;
  for (const auto& layer : j) {
    params.weights.push_back(matrix_from_json(layer.at("weights")));
    const auto bias = layer.at("bias").get<std::vector<double>>();
    params.biases.emplace_back(
        Eigen::Map<const Eigen::RowVectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size())));
    const auto activation = layer.at("activation").get<std::string>();
    if (activation == "linear") {
      params.activations.push_back(Activation::kLinear);
    } else if (activation == "relu") {
      params.activations.push_back(Activation::kRelu);
    } else {
      params.activations.push_back(Activation::kLeakyRelu);
    }
  }
  return params;
}

json schema_to_json(const FeatureSchema& schema) {
  json out = json::array();
  for (const auto& f : schema.features()) {
    json item;
    item["name"] = f.name;
    item["kind"] = f.kind == FeatureKind::kNumeric ? "numeric" : "categorical";
    if (f.kind == FeatureKind::kCategorical) item["levels"] = f.levels;
    out.push_back(std::move(item));
  }
  return out;
}

FeatureSchema schema_from_json(const json& j) {
  std::vector<FeatureSpec> features;
  for (const auto& item : j) {
    FeatureSpec spec;
    spec.name = item.at("name").get<std::string>();
    spec.kind = item.at("kind").get<std::string>() == "numeric" ? FeatureKind::kNumeric
                                                                : FeatureKind::kCategorical;
    if (item.contains("levels")) spec.levels = item.at("levels").get<std::vector<std::string>>();
    features.push_back(std::move(spec));
  }
  return FeatureSchema(std::move(features));
}

json config_to_json(const SynthConfig& c) {
  return json{{"latent_dim", c.latent_dim},
              {"hidden_dims", c.hidden_dims},
              {"gen_lr", c.gen_lr},
              {"disc_lr", c.disc_lr},
              {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},
              {"checkpoint_every", c.checkpoint_every},
              {"gumbel_tau", c.gumbel_tau},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"seed", c.seed}};
}

SynthConfig config_from_json(const json& j) {
  SynthConfig c;
  c.latent_dim = j.at("latent_dim").get<int>();
  c.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
  c.gen_lr = j.at("gen_lr").get<double>();
  c.disc_lr = j.at("disc_lr").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  c.gumbel_tau = j.at("gumbel_tau").get<double>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string to_text(const SynthesizerModel& model) {
  json j;
  j["format"] = "synth-model";
  j["version"] = 1;
  j["schema"] = schema_to_json(model.schema);
  j["num_classes"] = model.num_classes;
  j["generator"] = network_to_json(model.generator);
  j["discriminator"] = network_to_json(model.discriminator);
  j["log"] = {{"gen_loss", model.log.gen_loss}, {"disc_loss", model.log.disc_loss}};
  j["config"] = config_to_json(model.config);
  return j.dump(1) + "\n";
}

SynthesizerModel model_from_text(const std::string& text) {
  const json j = json::parse(text);
  if (j.at("format").get<std::string>() != "synth-model" || j.at("version").get<int>() != 1) {
    throw std::runtime_error("not a version-1 synthesizer model file");
  }
  SynthesizerModel model;
  model.schema = schema_from_json(j.at("schema"));
  model.encoding = make_encoding(model.schema);
  model.num_classes = j.at("num_classes").get<int>();
  model.generator = network_from_json(j.at("generator"));
  model.discriminator = network_from_json(j.at("discriminator"));
  model.log.gen_loss = j.at("log").at("gen_loss").get<std::vector<double>>();
  model.log.disc_loss = j.at("log").at("disc_loss").get<std::vector<double>>();
  model.config = config_from_json(j.at("config"));
  return model;
}

void save_model(const std::string& path, const SynthesizerModel& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_text(model);
  if (!out) throw std::runtime_error("write failed for " + path);
}

SynthesizerModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return model_from_text(buffer.str());
}

void write_loss_log_csv(const std::string& path, const TrainingLog& log) {
  CsvTable table;
  table.header = {"epoch", "gen_loss", "disc_loss", "gen_loss_ma50", "disc_loss_ma50"};
  const std::vector<double> gen_ma = moving_average(log.gen_loss, TrainingLog::kMovingAverageWindow);
  const std::vector<double> disc_ma =
      moving_average(log.disc_loss, TrainingLog::kMovingAverageWindow);
  for (std::size_t i = 0; i < log.gen_loss.size(); ++i) {
    table.rows.push_back({std::to_string(i + 1), format_double(log.gen_loss[i]),
                          format_double(log.disc_loss[i]),
                          std::isnan(gen_ma[i]) ? "" : format_double(gen_ma[i]),
                          std::isnan(disc_ma[i]) ? "" : format_double(disc_ma[i])});
  }
  write_csv(path, table);
}

}  // namespace nowcast::synth
