#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wzmerge/windows.hpp"

namespace wzmerge {

struct LstmDims {
  size_t input = kFeatureCount;
  size_t hidden = 50;
  size_t steps = kWindowSteps;
};

// Single-layer LSTM with a sigmoid readout on the final hidden state.
// Gate order everywhere (storage, serialization, gradient layout):
// input, forget, candidate, output. Matrices are row-major.
struct LstmParams {
  LstmDims dims;
  std::array<std::vector<double>, 4> w_in;   // hidden x input
  std::array<std::vector<double>, 4> w_rec;  // hidden x hidden
  std::array<std::vector<double>, 4> bias;   // hidden
  std::vector<double> head_w;                // hidden
  double head_b = 0.0;

  static LstmParams zeros(const LstmDims& d);
  // Xavier-uniform weights, zero biases except the forget gate at 1.
  static LstmParams init(const LstmDims& d, uint64_t seed);

  size_t parameter_count() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
  bool all_finite() const;
};

struct StepCache {
  std::array<std::vector<double>, 4> gate;  // post-activation i, f, g, o
  std::vector<double> c, tanh_c, h;
};

struct ForwardCache {
  std::vector<StepCache> steps;
  std::vector<double> h_used;  // final hidden state after dropout scaling
  double z = 0.0;
  double prob = 0.5;
};

// window: steps x input, row-major. dropout_scale (hidden-sized, values 0 or
// 1/keep) applies to the final hidden state only; empty span means inference.
double lstm_forward(const LstmParams& p, std::span<const double> window,
                    std::span<const double> dropout_scale = {},
                    ForwardCache* cache = nullptr);

// Binary cross-entropy with a positive-class weight; probabilities are
// clamped to [1e-12, 1 - 1e-12] before the logs.
double bce_loss(double prob, int label, double pos_weight);

struct TrainItem {
  const double* window = nullptr;         // steps x input, normalized
  int label = 0;
  const double* dropout_scale = nullptr;  // nullptr = none
};

// Exact gradient of the mean weighted loss over the batch via backpropagation
// through time. grads must be zeros(dims); returns the mean loss.
double lstm_batch_backward(const LstmParams& p, std::span<const TrainItem> items,
                           double pos_weight, LstmParams& grads);

double lstm_batch_loss(const LstmParams& p, std::span<const TrainItem> items,
                       double pos_weight);

struct ConfusionMatrix {
  uint64_t tn = 0, fp = 0, fn = 0, tp = 0;

  uint64_t total() const { return tn + fp + fn + tp; }
  double accuracy() const {
    return total() > 0 ? static_cast<double>(tn + tp) / static_cast<double>(total()) : 0.0;
  }
  double recall() const {
    return tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  }
  double precision() const {
    return tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  }
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  size_t batch_size = 256;
  size_t max_epochs = 12;
  double dropout = 0.2;
  size_t patience = 3;       // epochs without validation improvement
  double pos_weight = 0.0;   // 0 derives #negative / #positive from the fit split
  double val_fraction = 0.1;
  size_t hidden = 50;
  uint64_t seed = 1;
};

struct TrainMetadata {
  size_t epochs_run = 0;
  double pos_weight_used = 0.0;
  double final_train_loss = 0.0;
  double best_val_loss = 0.0;
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_val_loss;
  ConfusionMatrix test_confusion;
  double test_accuracy = 0.0;
};

struct ModelArtifact {
  Direction direction = Direction::Forward;
  LstmParams params;
  NormStats norm;
  TrainMetadata meta;
};

// Normalizer is fit on the training split only. Deterministic for a fixed
// seed: initialization, shuffling, and dropout masks all derive from it.
ModelArtifact train_lstm(const Dataset& train, const Dataset& test, Direction dir,
                         const TrainConfig& cfg);

struct Prediction {
  double probability = 0.0;
  bool conflicting = false;  // probability >= 0.5
};

Prediction predict(const ModelArtifact& m, const FeatureWindow& raw_window);

void save_model(const ModelArtifact& m, const std::string& path,
                std::string_view config_hash, uint64_t seed);
ModelArtifact load_model(const std::string& path);

}  // namespace wzmerge
