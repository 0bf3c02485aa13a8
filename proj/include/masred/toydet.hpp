#pragma once

#include "masred/dataset.hpp"
#include "masred/detection.hpp"
#include "masred/image.hpp"

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace masred {

struct DetectorConfig {
  int grid = 8;           // S: cells per side
  int input_size = 64;    // model resolution (square)
  int hidden = 32;        // H, 0 = no hidden layer
  int context = 1;        // neighbouring cell rings visible to each cell
  int colors = 8;         // K: learned per-pixel colour channels, window-max pooled
  std::vector<std::string> class_names{"vessel", "buoy"};

  int cell_size() const noexcept { return input_size / grid; }
  int num_cells() const noexcept { return grid * grid; }
  int num_classes() const noexcept { return static_cast<int>(class_names.size()); }
  int window() const noexcept { return (2 * context + 1) * cell_size(); }
  int raw_feature_dim() const noexcept { return window() * window() * 3; }
  int pooled_dim() const noexcept { return 2 * colors; }
  int feature_dim() const noexcept { return raw_feature_dim() + pooled_dim(); }
  int output_dim() const noexcept { return 1 + num_classes(); }

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

void validate(const DetectorConfig& config);

// Grid detector: every cell runs the same small network over the normalized
// pixels of its receptive window (the cell plus `context` rings of
// neighbouring cells, zero padded) and emits an objectness logit and one
// logit per class. Boxes are the fixed cell extents. Besides the raw window
// pixels the network sees K colour channels, each a rectified affine
// function of one pixel's RGB shared across positions, max-pooled once over
// the window and once over the cell.
// The colour channels feed the hidden layer and, linearly, the logits.
struct ToyDetectorModel {
  DetectorConfig config;
  Eigen::MatrixXd hidden_weights;  // F x H
  Eigen::VectorXd hidden_bias;     // H
  Eigen::MatrixXd output_weights;  // (H or F) x (1 + C)
  Eigen::VectorXd output_bias;     // 1 + C
  Eigen::MatrixXd color_weights;   // 3 x K
  Eigen::VectorXd color_bias;      // K
  Eigen::MatrixXd color_skip;      // 2K x (1 + C), pooled colour straight to logits

  ToyDetectorModel() = default;
  explicit ToyDetectorModel(DetectorConfig config);  // all parameters zero

  // Parameters uniform in [-scale, scale] from a seeded generator; the colour
// channel weights and biases are drawn 20x wider.
  static ToyDetectorModel initialized(const DetectorConfig& config, std::uint64_t seed, double scale = 0.05);

  std::size_t parameter_count() const noexcept;
  Eigen::VectorXd flat_parameters() const;
  void set_flat_parameters(const Eigen::VectorXd& values);
  bool all_finite() const;

  // Same configuration and exactly equal parameters.
  friend bool operator==(const ToyDetectorModel& a, const ToyDetectorModel& b);
};

// Closed-form parameter count for a configuration.
std::size_t parameter_count(const DetectorConfig& config);

// ---- evaluation --------------------------------------------------------------

// Per-cell network outputs.
struct CellOutputs {
  Eigen::MatrixXd logits;         // cells x (1 + C)
  Eigen::VectorXd objectness;     // cells
  Eigen::MatrixXd class_probs;    // cells x C
  Eigen::VectorXd confidence;     // objectness * max class prob
  std::vector<int> top_class;     // argmax class per cell
};

// Normalized input resampled (nearest neighbour) to the model resolution.
Raster<double> model_input(const ToyDetectorModel& model, const Raster<double>& input);

// Cells x feature_dim matrix: centred receptive-window pixels, then the
// max-pooled colour channels.
Eigen::MatrixXd cell_features(const ToyDetectorModel& model, const Raster<double>& model_resolution_input);

CellOutputs evaluate_cells(const ToyDetectorModel& model, const Raster<double>& input);
CellOutputs evaluate_cells(const ToyDetectorModel& model, const Image& image);

// One candidate per cell, boxes in the image's own pixel coordinates,
// filtered to confidence >= threshold.
DetectionSet forward(const ToyDetectorModel& model, const Image& image, double threshold = 0.0);

Box cell_box(const DetectorConfig& config, int cell, int image_width, int image_height);

// ---- loss ----------------------------------------------------------------------

// Per-cell supervision with explicit weights. The loss is
//   sum_k wo_k * BCE(p_k, t_k) + sum_k wc_k * CE(q_k, y_k).
struct CellTargets {
  Eigen::VectorXd objectness_weight;
  Eigen::VectorXd objectness_target;
  Eigen::VectorXd class_weight;
  std::vector<int> class_target;

  static CellTargets zeros(int cells);
  CellTargets scaled(double factor) const;
};

struct LossValue {
  double objectness = 0.0;
  double classification = 0.0;
  double total() const noexcept { return objectness + classification; }
};

// Standard targets: a cell is positive iff a truth box centre falls in it.
// Objectness is a weighted mean over all cells with positive cells counting
// four times; classification is averaged over positive cells.
CellTargets targets_from_annotations(const DetectorConfig& config, const std::vector<Annotation>& truth);

// Targets encoding an attack goal (see TargetSpec) over the cells associated
// with the victim (or every cell). Targeted: all those cells are supervised
// towards "object present" with the target class. Suppress: the cells whose
// confidence is >= active_threshold (or the strongest one) are supervised
// towards their current prediction, so ascending the loss removes it.
CellTargets targets_for_attack(const ToyDetectorModel& model, const Image& image, const TargetSpec& target,
                               double active_threshold = 0.3);

LossValue loss(const ToyDetectorModel& model, const Raster<double>& input, const CellTargets& targets);
LossValue loss(const ToyDetectorModel& model, const Image& image, const std::vector<Annotation>& truth);

// Analytic gradient of the loss with respect to the normalized input pixels,
// at the input's own resolution.
GradientField input_gradient(const ToyDetectorModel& model, const Raster<double>& input, const CellTargets& targets,
                             LossValue* value = nullptr);
GradientField grad_input(const ToyDetectorModel& model, const Image& image, const TargetSpec& target);

// Gradient with respect to the parameters, laid out like flat_parameters().
Eigen::VectorXd parameter_gradient(const ToyDetectorModel& model, const Raster<double>& input,
                                   const CellTargets& targets, LossValue* value = nullptr);

// ---- training --------------------------------------------------------------

struct TrainConfig {
  int epochs = 40;
  double learning_rate = 0.5;
  int batch_size = 8;
  std::uint64_t seed = 1;
  bool mirror = true;  // seeded random left-right flips
};

struct TrainResult {
  ToyDetectorModel model;
  std::vector<double> epoch_losses;  // mean loss per epoch
};

// Plain minibatch SGD with a seeded shuffle; starts from `initial`.
TrainResult train(const ToyDetectorModel& initial, const Dataset& dataset, const TrainConfig& config);

// Fraction of truth objects whose matched detection (confidence >= threshold)
// carries the truth class.
double detection_accuracy(const ToyDetectorModel& model, const Dataset& dataset, double threshold = 0.3);

// ---- model file ------------------------------------------------------------

std::vector<std::uint8_t> serialize_model(const ToyDetectorModel& model);
ToyDetectorModel deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const std::filesystem::path& path, const ToyDetectorModel& model);
ToyDetectorModel load_model(const std::filesystem::path& path);

}  // namespace masred
