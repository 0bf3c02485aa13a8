#include "masred/toydet.hpp"

#include "masred/digest.hpp"
#include "masred/error.hpp"
#include "masred/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

namespace masred {

namespace {
constexpr double kColorInitGain = 20.0;
constexpr double kPositiveObjectnessWeight = 4.0;
}  // namespace

void validate(const DetectorConfig& c) {
  if (c.grid < 1 || c.input_size < c.grid || c.input_size % c.grid != 0)
    throw Error(ErrorKind::invalid_argument, "detector: input size must be a positive multiple of the grid size");
  if (c.hidden < 0 || c.context < 0 || c.colors < 0)
    throw Error(ErrorKind::invalid_argument, "detector: hidden width, context and colour channels must be >= 0");
  if (c.class_names.empty()) throw Error(ErrorKind::invalid_argument, "detector: at least one class required");
}

std::size_t parameter_count(const DetectorConfig& c) {
  const std::size_t f = static_cast<std::size_t>(c.feature_dim());
  const std::size_t h = static_cast<std::size_t>(c.hidden);
  const std::size_t o = static_cast<std::size_t>(c.output_dim());
  const std::size_t k = static_cast<std::size_t>(c.colors);
  return (h > 0 ? f * h + h + h * o + o : f * o + o) + 3 * k + k + 2 * k * o;
}

ToyDetectorModel::ToyDetectorModel(DetectorConfig cfg) : config(std::move(cfg)) {
  validate(config);
  const int f = config.feature_dim();
  const int h = config.hidden;
  const int o = config.output_dim();
  hidden_weights = Eigen::MatrixXd::Zero(f, h);
  hidden_bias = Eigen::VectorXd::Zero(h);
  output_weights = Eigen::MatrixXd::Zero(h > 0 ? h : f, o);
  output_bias = Eigen::VectorXd::Zero(o);
  color_weights = Eigen::MatrixXd::Zero(3, config.colors);
  color_bias = Eigen::VectorXd::Zero(config.colors);
  color_skip = Eigen::MatrixXd::Zero(config.pooled_dim(), o);
}

ToyDetectorModel ToyDetectorModel::initialized(const DetectorConfig& config, std::uint64_t seed, double scale) {
  ToyDetectorModel model(config);
  Rng rng(seed);
  Eigen::VectorXd values(static_cast<Eigen::Index>(model.parameter_count()));
  for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = rng.uniform(-scale, scale);
  // The colour channels start as broad random colour detectors.
  const Eigen::Index k = config.colors;
  values.segment(values.size() - config.pooled_dim() * config.output_dim() - 4 * k, 4 * k) *= kColorInitGain;
  model.set_flat_parameters(values);
  return model;
}

std::size_t ToyDetectorModel::parameter_count() const noexcept {
  return static_cast<std::size_t>(hidden_weights.size() + hidden_bias.size() + output_weights.size() +
                                  output_bias.size() + color_weights.size() + color_bias.size() +
                                  color_skip.size());
}

Eigen::VectorXd ToyDetectorModel::flat_parameters() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index at = 0;
  auto put = [&](const auto& m) {
    out.segment(at, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    at += m.size();
  };
  put(hidden_weights);
  put(hidden_bias);
  put(output_weights);
  put(output_bias);
  put(color_weights);
  put(color_bias);
  put(color_skip);
  return out;
}

void ToyDetectorModel::set_flat_parameters(const Eigen::VectorXd& values) {
  if (static_cast<std::size_t>(values.size()) != parameter_count())
    throw Error(ErrorKind::invalid_argument, "detector: parameter vector has the wrong length");
  Eigen::Index at = 0;
  auto take = [&](auto& m) {
    Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = values.segment(at, m.size());
    at += m.size();
  };
  take(hidden_weights);
  take(hidden_bias);
  take(output_weights);
  take(output_bias);
  take(color_weights);
  take(color_bias);
  take(color_skip);
}

bool ToyDetectorModel::all_finite() const {
  return hidden_weights.allFinite() && hidden_bias.allFinite() && output_weights.allFinite() &&
         output_bias.allFinite() && color_weights.allFinite() && color_bias.allFinite() &&
         color_skip.allFinite();
}

// ---- forward -------------------------------------------------------------------

Raster<double> model_input(const ToyDetectorModel& model, const Raster<double>& input) {
  const int r = model.config.input_size;
  if (input.width == r && input.height == r) return input;
  Raster<double> out(r, r);
  for (int y = 0; y < r; ++y) {
    const int sy = nearest_source(y, input.height, r);
    for (int x = 0; x < r; ++x) {
      const int sx = nearest_source(x, input.width, r);
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = input.at(sx, sy, c);
    }
  }
  return out;
}

namespace {

// Features are centred so that zero padding reads as mid grey.
constexpr double kFeatureCentre = 0.5;

// Visits every in-bounds pixel of every cell window: f(cell, pixel, offset)
// with pixel = y * r + x and offset = dy * window + dx.
template <typename F>
void for_each_window_pixel(const DetectorConfig& cfg, F&& f) {
  const int r = cfg.input_size;
  const int cs = cfg.cell_size();
  const int win = cfg.window();
  for (int ci = 0; ci < cfg.grid; ++ci) {
    for (int cj = 0; cj < cfg.grid; ++cj) {
      const int cell = ci * cfg.grid + cj;
      const int y0 = (ci - cfg.context) * cs;
      const int x0 = (cj - cfg.context) * cs;
      for (int dy = 0; dy < win; ++dy) {
        const int y = y0 + dy;
        if (y < 0 || y >= r) continue;
        for (int dx = 0; dx < win; ++dx) {
          const int x = x0 + dx;
          if (x < 0 || x >= r) continue;
          f(cell, y * r + x, dy * win + dx);
        }
      }
    }
  }
}

// Per-pixel colour branch of one model-resolution input.
struct ColorBranch {
  Eigen::MatrixXd pixels;  // R^2 x 3, centred
  Eigen::MatrixXd pre;     // R^2 x K
  Eigen::MatrixXi argmax;  // cells x 2K, winning pixel or -1
};

ColorBranch color_branch(const ToyDetectorModel& model, const Raster<double>& in) {
  ColorBranch b;
  const Eigen::Index n = static_cast<Eigen::Index>(in.width) * in.height;
  b.pixels = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>>(in.values.data(), n, 3);
  b.pixels.array() -= kFeatureCentre;
  if (model.config.colors > 0) {
    b.pre.noalias() = b.pixels * model.color_weights;
    b.pre.rowwise() += model.color_bias.transpose();
  }
  return b;
}

// Writes the cells x F feature block of one model-resolution input: raw
// window pixels, then the max of each rectified colour channel over the
// window, then over the cell itself. Records the winners in branch.argmax.
template <typename Block>
void gather_features(const ToyDetectorModel& model, ColorBranch& branch, Block&& x) {
  const auto& cfg = model.config;
  const int raw = cfg.raw_feature_dim();
  const int k = cfg.colors;
  const int win = cfg.window();
  const int lo = cfg.context * cfg.cell_size();
  const int hi = lo + cfg.cell_size();
  x.setZero();
  branch.argmax.setConstant(cfg.num_cells(), 2 * k, -1);
  auto offer = [&](int cell, int column, int pixel, double u) {
    if (u > x(cell, raw + column)) {
      x(cell, raw + column) = u;
      branch.argmax(cell, column) = pixel;
    }
  };
  for_each_window_pixel(cfg, [&](int cell, int pixel, int offset) {
    const int f = offset * 3;
    x(cell, f) = branch.pixels(pixel, 0);
    x(cell, f + 1) = branch.pixels(pixel, 1);
    x(cell, f + 2) = branch.pixels(pixel, 2);
    if (k == 0) return;
    const int dy = offset / win;
    const int dx = offset % win;
    const bool own = dy >= lo && dy < hi && dx >= lo && dx < hi;
    for (int c = 0; c < k; ++c) {
      const double u = branch.pre(pixel, c);
      offer(cell, c, pixel, u);
      if (own) offer(cell, k + c, pixel, u);
    }
  });
}

// Back-propagates d(features) into d(pixels) (R^2 x 3, optional) and the
// colour-branch parameter gradients (optional).
template <typename Block>
void scatter_features(const ToyDetectorModel& model, const ColorBranch& branch, const Block& dx,
                      Eigen::MatrixXd* d_pixels, Eigen::MatrixXd* d_color_weights, Eigen::VectorXd* d_color_bias) {
  const auto& cfg = model.config;
  const int raw = cfg.raw_feature_dim();
  const int k = cfg.colors;
  if (d_pixels) {
    for_each_window_pixel(cfg, [&](int cell, int pixel, int offset) {
      const int f = offset * 3;
      (*d_pixels)(pixel, 0) += dx(cell, f);
      (*d_pixels)(pixel, 1) += dx(cell, f + 1);
      (*d_pixels)(pixel, 2) += dx(cell, f + 2);
    });
  }
  if (k == 0) return;
  Eigen::MatrixXd d_pre = Eigen::MatrixXd::Zero(branch.pixels.rows(), k);
  for (Eigen::Index cell = 0; cell < branch.argmax.rows(); ++cell)
    for (int c = 0; c < 2 * k; ++c)
      if (const int p = branch.argmax(cell, c); p >= 0) d_pre(p, c % k) += dx(cell, raw + c);
  if (d_pixels) d_pixels->noalias() += d_pre * model.color_weights.transpose();
  if (d_color_weights) d_color_weights->noalias() += branch.pixels.transpose() * d_pre;
  if (d_color_bias) *d_color_bias += d_pre.colwise().sum().transpose();
}

}  // namespace

Eigen::MatrixXd cell_features(const ToyDetectorModel& model, const Raster<double>& in) {
  Eigen::MatrixXd x(model.config.num_cells(), model.config.feature_dim());
  ColorBranch branch = color_branch(model, in);
  gather_features(model, branch, x);
  return x;
}

namespace {

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

struct Activations {
  ColorBranch branch;
  Eigen::MatrixXd features;   // cells x F
  Eigen::MatrixXd pre_hidden; // cells x H
  Eigen::MatrixXd hidden;     // cells x H
  Eigen::MatrixXd logits;     // cells x (1 + C)
};

Activations run(const ToyDetectorModel& model, const Raster<double>& model_res) {
  Activations a;
  a.branch = color_branch(model, model_res);
  a.features.resize(model.config.num_cells(), model.config.feature_dim());
  gather_features(model, a.branch, a.features);
  if (model.config.hidden > 0) {
    a.pre_hidden = (a.features * model.hidden_weights).rowwise() + model.hidden_bias.transpose();
    a.hidden = a.pre_hidden.cwiseMax(0.0);
    a.logits = (a.hidden * model.output_weights).rowwise() + model.output_bias.transpose();
  } else {
    a.logits = (a.features * model.output_weights).rowwise() + model.output_bias.transpose();
  }
  if (model.config.colors > 0) a.logits.noalias() += a.features.rightCols(model.config.pooled_dim()) * model.color_skip;
  return a;
}

CellOutputs outputs_from_logits(const Eigen::MatrixXd& logits) {
  CellOutputs out;
  const Eigen::Index cells = logits.rows();
  const Eigen::Index classes = logits.cols() - 1;
  out.logits = logits;
  out.objectness.resize(cells);
  out.class_probs.resize(cells, classes);
  out.confidence.resize(cells);
  out.top_class.resize(static_cast<std::size_t>(cells));
  for (Eigen::Index k = 0; k < cells; ++k) {
    out.objectness[k] = sigmoid(logits(k, 0));
    const auto z = logits.row(k).tail(classes);
    const double zmax = z.maxCoeff();
    Eigen::RowVectorXd e = (z.array() - zmax).exp().matrix();
    e /= e.sum();
    out.class_probs.row(k) = e;
    Eigen::Index best = 0;
    const double pmax = e.maxCoeff(&best);
    out.top_class[static_cast<std::size_t>(k)] = static_cast<int>(best);
    out.confidence[k] = out.objectness[k] * pmax;
  }
  return out;
}

}  // namespace

CellOutputs evaluate_cells(const ToyDetectorModel& model, const Raster<double>& input) {
  return outputs_from_logits(run(model, model_input(model, input)).logits);
}

CellOutputs evaluate_cells(const ToyDetectorModel& model, const Image& image) {
  return evaluate_cells(model, normalized(image));
}

Box cell_box(const DetectorConfig& config, int cell, int image_width, int image_height) {
  const int ci = cell / config.grid;
  const int cj = cell % config.grid;
  const double w = double(image_width) / config.grid;
  const double h = double(image_height) / config.grid;
  return {cj * w, ci * h, w, h};
}

DetectionSet forward(const ToyDetectorModel& model, const Image& image, double threshold) {
  const CellOutputs out = evaluate_cells(model, image);
  DetectionSet set;
  for (int k = 0; k < model.config.num_cells(); ++k) {
    if (out.confidence[k] < threshold) continue;
    set.detections.push_back({out.top_class[static_cast<std::size_t>(k)],
                              cell_box(model.config, k, image.width(), image.height()), out.confidence[k], k});
  }
  return set;
}

// ---- loss ----------------------------------------------------------------------

CellTargets CellTargets::zeros(int cells) {
  CellTargets t;
  t.objectness_weight = Eigen::VectorXd::Zero(cells);
  t.objectness_target = Eigen::VectorXd::Zero(cells);
  t.class_weight = Eigen::VectorXd::Zero(cells);
  t.class_target.assign(static_cast<std::size_t>(cells), 0);
  return t;
}

CellTargets CellTargets::scaled(double factor) const {
  CellTargets t = *this;
  t.objectness_weight *= factor;
  t.class_weight *= factor;
  return t;
}

CellTargets targets_from_annotations(const DetectorConfig& config, const std::vector<Annotation>& truth) {
  const int cells = config.num_cells();
  CellTargets t = CellTargets::zeros(cells);
  std::vector<bool> positive(static_cast<std::size_t>(cells), false);
  for (const auto& a : truth) {
    if (a.class_id < 0 || a.class_id >= config.num_classes())
      throw Error(ErrorKind::range, "loss: truth class id out of range");
    const int ci = std::min(config.grid - 1, static_cast<int>(a.cy * config.grid));
    const int cj = std::min(config.grid - 1, static_cast<int>(a.cx * config.grid));
    const int k = ci * config.grid + cj;
    if (positive[static_cast<std::size_t>(k)]) continue;  // first box claims the cell
    positive[static_cast<std::size_t>(k)] = true;
    t.objectness_target[k] = 1.0;
    t.class_target[static_cast<std::size_t>(k)] = a.class_id;
  }
  const auto n_pos = std::count(positive.begin(), positive.end(), true);
  // Weighted mean over cells, positives counting kPositiveObjectnessWeight times.
  const double pw = kPositiveObjectnessWeight;
  const double norm = pw * static_cast<double>(n_pos) + static_cast<double>(cells - n_pos);
  for (int k = 0; k < cells; ++k)
    t.objectness_weight[k] = (positive[static_cast<std::size_t>(k)] ? pw : 1.0) / norm;
  if (n_pos > 0) {
    for (int k = 0; k < cells; ++k)
      if (positive[static_cast<std::size_t>(k)]) t.class_weight[k] = 1.0 / static_cast<double>(n_pos);
  }
  return t;
}

CellTargets targets_for_attack(const ToyDetectorModel& model, const Image& image, const TargetSpec& target,
                               double active_threshold) {
  const auto& cfg = model.config;
  if (target.mode == TargetSpec::Mode::targeted && (target.target_class < 0 || target.target_class >= cfg.num_classes()))
    throw Error(ErrorKind::range, "target class out of range for the model");
  const CellOutputs current = evaluate_cells(model, image);
  std::vector<int> region;
  for (int k = 0; k < cfg.num_cells(); ++k) {
    if (!target.victim || overlap_ratio(cell_box(cfg, k, image.width(), image.height()), *target.victim) >= kMatchOverlap)
      region.push_back(k);
  }
  if (region.empty()) {
    region.resize(static_cast<std::size_t>(cfg.num_cells()));
    std::iota(region.begin(), region.end(), 0);
  }
  std::vector<int> selected = region;
  if (target.mode == TargetSpec::Mode::untargeted_suppress) {
    // Only the cells that currently report the object; saturated background
    // cells would otherwise dominate the gradient sign.
    selected.clear();
    int strongest = region.front();
    for (int k : region) {
      if (current.confidence[k] >= active_threshold) selected.push_back(k);
      if (current.confidence[k] > current.confidence[strongest]) strongest = k;
    }
    if (selected.empty()) selected.push_back(strongest);
  }
  CellTargets t = CellTargets::zeros(cfg.num_cells());
  const double w = 1.0 / static_cast<double>(selected.size());
  for (int k : selected) {
    t.objectness_weight[k] = w;
    t.objectness_target[k] = 1.0;
    t.class_weight[k] = w;
    t.class_target[static_cast<std::size_t>(k)] =
        target.mode == TargetSpec::Mode::targeted ? target.target_class : current.top_class[static_cast<std::size_t>(k)];
  }
  return t;
}

namespace {

// Loss value plus dLoss/dlogits.
LossValue loss_and_logit_grad(const Eigen::MatrixXd& logits, const CellTargets& t, Eigen::MatrixXd* dlogits) {
  const Eigen::Index cells = logits.rows();
  const Eigen::Index classes = logits.cols() - 1;
  if (t.objectness_weight.size() != cells) throw Error(ErrorKind::invalid_argument, "loss: target shape mismatch");
  LossValue value;
  if (dlogits) dlogits->setZero(cells, logits.cols());
  for (Eigen::Index k = 0; k < cells; ++k) {
    const double z = logits(k, 0);
    const double wo = t.objectness_weight[k];
    if (wo != 0.0) {
      value.objectness += wo * (softplus(z) - t.objectness_target[k] * z);
      if (dlogits) (*dlogits)(k, 0) = wo * (sigmoid(z) - t.objectness_target[k]);
    }
    const double wc = t.class_weight[k];
    if (wc != 0.0) {
      const auto zc = logits.row(k).tail(classes);
      const double zmax = zc.maxCoeff();
      Eigen::RowVectorXd e = (zc.array() - zmax).exp().matrix();
      const double sum = e.sum();
      const int y = t.class_target[static_cast<std::size_t>(k)];
      value.classification += wc * (zmax + std::log(sum) - zc[y]);
      if (dlogits) {
        e /= sum;
        e[y] -= 1.0;
        dlogits->row(k).tail(classes) = wc * e;
      }
    }
  }
  return value;
}

struct Backward {
  Eigen::MatrixXd d_pixels;  // R^2 x 3
  Eigen::VectorXd d_params;
};

Backward backward(const ToyDetectorModel& model, const Activations& a, const Eigen::MatrixXd& dlogits, bool want_input,
                  bool want_params) {
  const auto& cfg = model.config;
  Backward b;
  Eigen::MatrixXd d_features;
  Eigen::MatrixXd dw1, dw2, dcw = Eigen::MatrixXd::Zero(3, cfg.colors);
  Eigen::VectorXd db1, dcb = Eigen::VectorXd::Zero(cfg.colors);
  if (cfg.hidden > 0) {
    Eigen::MatrixXd d_pre = dlogits * model.output_weights.transpose();
    d_pre.array() *= (a.pre_hidden.array() > 0.0).cast<double>();
    d_features = d_pre * model.hidden_weights.transpose();
    if (want_params) {
      dw1 = a.features.transpose() * d_pre;
      db1 = d_pre.colwise().sum().transpose();
      dw2 = a.hidden.transpose() * dlogits;
    }
  } else {
    d_features = dlogits * model.output_weights.transpose();
    if (want_params) dw2 = a.features.transpose() * dlogits;
  }
  const int k = cfg.colors;
  if (k > 0) d_features.rightCols(2 * k).noalias() += dlogits * model.color_skip.transpose();
  if (want_input) b.d_pixels = Eigen::MatrixXd::Zero(a.branch.pixels.rows(), 3);
  scatter_features(model, a.branch, d_features, want_input ? &b.d_pixels : nullptr, want_params ? &dcw : nullptr,
                   want_params ? &dcb : nullptr);
  if (want_params) {
    b.d_params.resize(static_cast<Eigen::Index>(model.parameter_count()));
    Eigen::Index at = 0;
    auto put = [&](const auto& m) {
      b.d_params.segment(at, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
      at += m.size();
    };
    if (cfg.hidden > 0) {
      put(dw1);
      put(db1);
    }
    put(dw2);
    const Eigen::VectorXd db2 = dlogits.colwise().sum().transpose();
    put(db2);
    put(dcw);
    put(dcb);
    const Eigen::MatrixXd dskip = a.features.rightCols(2 * k).transpose() * dlogits;
    put(dskip);
  }
  return b;
}

}  // namespace

LossValue loss(const ToyDetectorModel& model, const Raster<double>& input, const CellTargets& targets) {
  return loss_and_logit_grad(run(model, model_input(model, input)).logits, targets, nullptr);
}

LossValue loss(const ToyDetectorModel& model, const Image& image, const std::vector<Annotation>& truth) {
  return loss(model, normalized(image), targets_from_annotations(model.config, truth));
}

GradientField input_gradient(const ToyDetectorModel& model, const Raster<double>& input, const CellTargets& targets,
                             LossValue* value) {
  const int r = model.config.input_size;
  const Activations a = run(model, model_input(model, input));
  Eigen::MatrixXd dlogits;
  const LossValue v = loss_and_logit_grad(a.logits, targets, &dlogits);
  if (value) *value = v;
  const Backward b = backward(model, a, dlogits, true, false);

  Raster<double> model_grad(r, r);
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>>(model_grad.values.data(), b.d_pixels.rows(), 3) =
      b.d_pixels;
  if (input.width == r && input.height == r) return model_grad;

  // Transpose of the nearest-neighbour resampling.
  GradientField grad(input.width, input.height);
  for (int y = 0; y < r; ++y) {
    const int sy = nearest_source(y, input.height, r);
    for (int x = 0; x < r; ++x) {
      const int sx = nearest_source(x, input.width, r);
      for (int c = 0; c < 3; ++c) grad.at(sx, sy, c) += model_grad.at(x, y, c);
    }
  }
  return grad;
}

GradientField grad_input(const ToyDetectorModel& model, const Image& image, const TargetSpec& target) {
  return input_gradient(model, normalized(image), targets_for_attack(model, image, target));
}

Eigen::VectorXd parameter_gradient(const ToyDetectorModel& model, const Raster<double>& input, const CellTargets& targets,
                                   LossValue* value) {
  const Activations a = run(model, model_input(model, input));
  Eigen::MatrixXd dlogits;
  const LossValue v = loss_and_logit_grad(a.logits, targets, &dlogits);
  if (value) *value = v;
  return backward(model, a, dlogits, false, true).d_params;
}

// ---- training --------------------------------------------------------------

TrainResult train(const ToyDetectorModel& initial, const Dataset& dataset, const TrainConfig& config) {
  if (dataset.empty()) throw Error(ErrorKind::invalid_argument, "train: dataset is empty");
  if (config.epochs < 0 || config.batch_size < 1 || !(config.learning_rate > 0.0))
    throw Error(ErrorKind::invalid_argument, "train: invalid configuration");
  for (const auto& item : dataset.items)
    for (const auto& a : item.annotations)
      if (a.class_id >= initial.config.num_classes())
        throw Error(ErrorKind::range, "train: dataset class id exceeds the model's class count");

  // Item i is stored at 2i, its left-right mirror image at 2i + 1.
  std::vector<Raster<double>> inputs;
  std::vector<CellTargets> targets;
  inputs.reserve(2 * dataset.size());
  targets.reserve(2 * dataset.size());
  for (const auto& item : dataset.items) {
    inputs.push_back(model_input(initial, normalized(item.image)));
    targets.push_back(targets_from_annotations(initial.config, item.annotations));
    const Raster<double>& in = inputs.back();
    Raster<double> flipped(in.width, in.height);
    for (int y = 0; y < in.height; ++y)
      for (int x = 0; x < in.width; ++x)
        for (int c = 0; c < 3; ++c) flipped.at(in.width - 1 - x, y, c) = in.at(x, y, c);
    inputs.push_back(std::move(flipped));
    std::vector<Annotation> mirrored = item.annotations;
    for (auto& a : mirrored) a.cx = 1.0 - a.cx;
    targets.push_back(targets_from_annotations(initial.config, mirrored));
  }

  // Whole minibatches go through the network as one stacked cells x F block.
  const DetectorConfig& cfg = initial.config;
  const Eigen::Index cells = cfg.num_cells();
  const bool hidden = cfg.hidden > 0;
  TrainResult result{initial, {}};
  ToyDetectorModel& m = result.model;
  Eigen::MatrixXd x, z1, a, logits, dlogits, dz1, dw1, dw2, dpool, dskip;
  const int raw = cfg.raw_feature_dim();
  const int k = cfg.colors;
  Eigen::MatrixXd dcw(3, k), dx;
  Eigen::VectorXd dcb(k);
  std::vector<ColorBranch> branches(static_cast<std::size_t>(config.batch_size));
  CellTargets batch_targets;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(config.seed);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      const auto n = static_cast<Eigen::Index>(end - begin);
      const Eigen::Index rows = n * cells;
      if (x.rows() != rows) {
        x.resize(rows, cfg.feature_dim());
        batch_targets = CellTargets::zeros(static_cast<int>(rows));
      }
      for (Eigen::Index b = 0; b < n; ++b) {
        const std::size_t item = 2 * order[begin + static_cast<std::size_t>(b)] + (config.mirror && rng.bernoulli(0.5));
        branches[static_cast<std::size_t>(b)] = color_branch(m, inputs[item]);
        gather_features(m, branches[static_cast<std::size_t>(b)], x.middleRows(b * cells, cells));
        const CellTargets& t = targets[item];
        batch_targets.objectness_weight.segment(b * cells, cells) = t.objectness_weight;
        batch_targets.objectness_target.segment(b * cells, cells) = t.objectness_target;
        batch_targets.class_weight.segment(b * cells, cells) = t.class_weight;
        std::copy(t.class_target.begin(), t.class_target.end(), batch_targets.class_target.begin() + b * cells);
      }
      if (hidden) {
        z1.noalias() = x * m.hidden_weights;
        z1.rowwise() += m.hidden_bias.transpose();
        a = z1.cwiseMax(0.0);
        logits.noalias() = a * m.output_weights;
      } else {
        logits.noalias() = x * m.output_weights;
      }
      logits.rowwise() += m.output_bias.transpose();
      if (k > 0) logits.noalias() += x.rightCols(2 * k) * m.color_skip;
      epoch_loss += loss_and_logit_grad(logits, batch_targets, &dlogits).total();

      const double step = config.learning_rate / static_cast<double>(n);
      if (hidden) {
        dz1.noalias() = dlogits * m.output_weights.transpose();
        dz1.array() *= (z1.array() > 0.0).cast<double>();
        dw2.noalias() = a.transpose() * dlogits;
        dw1.noalias() = x.transpose() * dz1;
        if (k > 0) dpool.noalias() = dz1 * m.hidden_weights.bottomRows(2 * k).transpose();
      } else {
        dw2.noalias() = x.transpose() * dlogits;
        if (k > 0) dpool.noalias() = dlogits * m.output_weights.bottomRows(2 * k).transpose();
      }
      if (k > 0) {
        dpool.noalias() += dlogits * m.color_skip.transpose();
        dskip.noalias() = x.rightCols(2 * k).transpose() * dlogits;
        // Only the pooled colour columns of d(features) reach the colour branch.
        dcw.setZero();
        dcb.setZero();
        dx = Eigen::MatrixXd::Zero(cells, raw + 2 * k);
        for (Eigen::Index b = 0; b < n; ++b) {
          dx.rightCols(2 * k) = dpool.middleRows(b * cells, cells);
          scatter_features(m, branches[static_cast<std::size_t>(b)], dx, nullptr, &dcw, &dcb);
        }
      }
      if (hidden) {
        m.hidden_weights -= step * dw1;
        m.hidden_bias -= step * dz1.colwise().sum().transpose();
      }
      m.output_weights -= step * dw2;
      m.output_bias -= step * dlogits.colwise().sum().transpose();
      if (k > 0) {
        m.color_weights -= step * dcw;
        m.color_bias -= step * dcb;
        m.color_skip -= step * dskip;
      }
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss) || !m.all_finite())
      throw Error(ErrorKind::divergence, "train: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                             " (learning rate " + std::to_string(config.learning_rate) + ")");
    result.epoch_losses.push_back(epoch_loss);
  }
  return result;
}

double detection_accuracy(const ToyDetectorModel& model, const Dataset& dataset, double threshold) {
  std::size_t total = 0;
  std::size_t correct = 0;
  for (const auto& item : dataset.items) {
    if (item.annotations.empty()) continue;
    const DetectionSet dets = forward(model, item.image, threshold);
    for (const auto& a : item.annotations) {
      ++total;
      const auto m = match_victim(dets, to_pixel_box(a, item.image.width(), item.image.height()));
      if (m && m->class_id == a.class_id) ++correct;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

// ---- model file ------------------------------------------------------------

namespace {

constexpr char kModelMagic[4] = {'M', 'T', 'D', 'M'};
constexpr std::uint32_t kModelVersion = 2;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw Error(ErrorKind::format, "model file: truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

bool operator==(const ToyDetectorModel& a, const ToyDetectorModel& b) {
  if (!(a.config == b.config)) return false;
  const Eigen::VectorXd pa = a.flat_parameters(), pb = b.flat_parameters();
  return pa.size() == pb.size() && (pa.array() == pb.array()).all();
}

std::vector<std::uint8_t> serialize_model(const ToyDetectorModel& model) {
  const auto& c = model.config;
  std::vector<std::uint8_t> out(kModelMagic, kModelMagic + 4);
  put_u32(out, kModelVersion);
  put_u32(out, static_cast<std::uint32_t>(c.grid));
  put_u32(out, static_cast<std::uint32_t>(c.hidden));
  put_u32(out, static_cast<std::uint32_t>(c.num_classes()));
  put_u32(out, static_cast<std::uint32_t>(c.input_size));
  put_u32(out, static_cast<std::uint32_t>(c.context));
  put_u32(out, static_cast<std::uint32_t>(c.colors));
  put_u64(out, model.parameter_count());
  for (const auto& name : c.class_names) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
  }
  const Eigen::VectorXd params = model.flat_parameters();
  for (Eigen::Index i = 0; i < params.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(params[i]));
  return out;
}

ToyDetectorModel deserialize_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kModelMagic, 4) != 0)
    throw Error(ErrorKind::format, "model file: bad magic");
  Reader in(bytes.subspan(4));
  if (in.uint(4) != kModelVersion) throw Error(ErrorKind::format, "model file: unsupported version");
  DetectorConfig c;
  c.grid = static_cast<int>(in.uint(4));
  c.hidden = static_cast<int>(in.uint(4));
  const auto classes = in.uint(4);
  c.input_size = static_cast<int>(in.uint(4));
  c.context = static_cast<int>(in.uint(4));
  c.colors = static_cast<int>(in.uint(4));
  if (c.grid < 1 || c.grid > 4096 || c.hidden > 1 << 20 || c.input_size > 1 << 16 || c.context > 64 || c.colors > 1 << 16)
    throw Error(ErrorKind::format, "model file: implausible dimensions");
  const auto count = in.uint(8);
  if (classes == 0 || classes > 4096) throw Error(ErrorKind::format, "model file: bad class count");
  c.class_names.clear();
  for (std::uint64_t i = 0; i < classes; ++i) c.class_names.push_back(in.text(in.uint(4)));
  ToyDetectorModel model(c);
  if (count != model.parameter_count()) throw Error(ErrorKind::format, "model file: parameter count mismatch");
  Eigen::VectorXd params(static_cast<Eigen::Index>(count));
  for (Eigen::Index i = 0; i < params.size(); ++i) params[i] = std::bit_cast<double>(in.uint(8));
  if (!in.done()) throw Error(ErrorKind::format, "model file: trailing bytes");
  model.set_flat_parameters(params);
  if (!model.all_finite()) throw Error(ErrorKind::format, "model file: non-finite parameter");
  return model;
}

void save_model(const std::filesystem::path& path, const ToyDetectorModel& model) {
  write_file_bytes(path, serialize_model(model));
}

ToyDetectorModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file_bytes(path)); }

}  // namespace masred
