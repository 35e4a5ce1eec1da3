#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "nowcast/dataset.hpp"
#include "nowcast/rng.hpp"

namespace nowcast::synth {

struct SynthConfig {
  int latent_dim = 64;
  std::vector<int> hidden_dims = {128, 128};
  double gen_lr = 1e-3;
  double disc_lr = 1e-3;
  int batch_size = 500;
  int max_epochs = 1000;
  int checkpoint_every = 50;
  double gumbel_tau = 0.2;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Encoding: numeric features pass through, categorical features one-hot
// ---------------------------------------------------------------------------

struct Encoding {
  struct Block {
    int feature = 0;
    FeatureKind kind = FeatureKind::kNumeric;
    int offset = 0;
    int width = 1;
  };
  std::vector<Block> blocks;
  int width = 0;
};

Encoding make_encoding(const FeatureSchema& schema);

/// Numeric values must already be min-max normalized to [0, 1]; throws
/// otherwise.
Eigen::MatrixXd encode(const TabularDataset& data);

/// Inverse of encode; categorical blocks decode by argmax.
TabularDataset decode(const Eigen::Ref<const Eigen::MatrixXd>& encoded,
                      const FeatureSchema& schema);

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

enum class Activation { kLinear, kRelu, kLeakyRelu };

struct NetworkParams {
  std::vector<Eigen::MatrixXd> weights;     // layer l: in x out
  std::vector<Eigen::RowVectorXd> biases;   // per layer
  std::vector<Activation> activations;      // per layer

  std::size_t num_layers() const { return weights.size(); }
};

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::RowVectorXd> biases;
};

/// Zero-initialized generator: [z, condition] -> hidden (rectifier) ->
/// encoded width (linear pre-activations; block activations applied outside).
NetworkParams generator_architecture(const SynthConfig& config, int encoded_width,
                                     int num_classes);

/// Zero-initialized discriminator: [encoded, condition] -> hidden (leaky
/// rectifier, slope 0.2) -> 1 logit.
NetworkParams discriminator_architecture(const SynthConfig& config, int encoded_width,
                                         int num_classes);

/// Scaled-normal weight init, biases zero.
void randomize(NetworkParams& params, Rng& rng);

/// Distribution view of the generator for one latent/condition pair: numeric
/// outputs through the logistic squash, each categorical block through
/// softmax. Pure function of its arguments.
Eigen::RowVectorXd generator_forward(const NetworkParams& generator, const Encoding& encoding,
                                     const Eigen::Ref<const Eigen::RowVectorXd>& z,
                                     const Eigen::Ref<const Eigen::RowVectorXd>& condition);

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<Eigen::MatrixXd> m_weights, v_weights;
  std::vector<Eigen::RowVectorXd> m_biases, v_biases;
  long step = 0;

  static AdamState like(const NetworkParams& params);
};

/// Standard bias-corrected Adam update. Throws on a non-finite gradient,
/// naming the layer.
void adam_step(NetworkParams& params, const Gradients& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainingLog {
  std::vector<double> gen_loss;   // one entry per completed epoch
  std::vector<double> disc_loss;
  static constexpr int kMovingAverageWindow = 50;
};

/// Trailing moving average; entries before the window fills are NaN.
std::vector<double> moving_average(const std::vector<double>& values, int window);

struct SynthesizerModel {
  FeatureSchema schema;
  Encoding encoding;
  int num_classes = 0;
  NetworkParams generator;
  NetworkParams discriminator;
  TrainingLog log;
  SynthConfig config;
};

/// Raised when a loss goes non-finite; carries the log up to that point.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, TrainingLog log)
      : std::runtime_error(what), log_(std::move(log)) {}
  const TrainingLog& log() const { return log_; }

 private:
  TrainingLog log_;
};

struct Checkpoint {
  int epoch = 0;
  SynthesizerModel model;
  std::string path;  // empty when not written to disk
};

struct FitResult {
  SynthesizerModel model;
  std::vector<Checkpoint> checkpoints;
};

/// Adversarial training with training-by-sampling: per batch row a condition
/// class is drawn uniformly over classes, a real row of that class is drawn
/// with replacement, the discriminator takes a binary cross-entropy step on
/// (real, cond) vs (generated, cond), and the generator takes a
/// non-saturating step through the frozen discriminator. All gradients are
/// derived manually, including through the Gumbel-softmax relaxation.
/// Checkpoints at every multiple of checkpoint_every; written into
/// checkpoint_dir when non-empty, named by epoch.
FitResult fit(const TabularDataset& data, int num_classes, const SynthConfig& config,
              const std::string& checkpoint_dir = "");

/// Same training loop with an explicit ascending list of snapshot epochs.
FitResult fit_with_snapshots(const TabularDataset& data, int num_classes,
                             const SynthConfig& config, const std::vector<int>& snapshot_epochs,
                             const std::string& checkpoint_dir = "");

/// Class-targeted sampling: exact per-class counts by largest remainder, the
/// label column equals the conditioning class, numeric outputs in (0, 1),
/// categorical outputs decoded from argmax one-hots.
TabularDataset sample(const SynthesizerModel& model, int n, const std::vector<double>& class_ratios,
                      std::uint64_t seed);

/// Analytic vs central-finite-difference gradients of both adversarial
/// losses on a small fixture; returns the max relative error over all
/// parameters of both networks.
double gradient_check(const SynthConfig& config, const TabularDataset& fixture, int num_classes);

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

std::string to_text(const SynthesizerModel& model);
SynthesizerModel model_from_text(const std::string& text);
void save_model(const std::string& path, const SynthesizerModel& model);
SynthesizerModel load_model(const std::string& path);

/// loss log CSV: epoch,gen_loss,disc_loss,gen_loss_ma50,disc_loss_ma50
void write_loss_log_csv(const std::string& path, const TrainingLog& log);

}  // namespace nowcast::synth
