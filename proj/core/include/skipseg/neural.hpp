#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace skipseg::nn {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& s);
std::string shape_string(const Shape& s);

/// Row-major float64 array.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(element_count(shape), 0.0) {}
  Tensor(Shape s, std::vector<double> d);

  std::size_t rows() const { return shape.empty() ? 0 : shape.front(); }
  std::span<const double> row(std::size_t i) const;
  std::span<double> row(std::size_t i);
};

enum class LayerKind { kDense, kConv2D, kMaxPool2D, kRelu, kTanh, kSigmoid };

const char* to_string(LayerKind kind);

/// One layer of a sequential network. Convolutions are valid-mode with unit
/// stride over (channels, height, width) inputs; pooling windows do not overlap.
struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  std::size_t units = 0;               // dense outputs, or conv filters
  std::size_t kernel_h = 0, kernel_w = 0;  // conv kernel, or pooling window

  static LayerSpec dense(std::size_t units) { return {LayerKind::kDense, units, 0, 0}; }
  static LayerSpec conv2d(std::size_t filters, std::size_t kh, std::size_t kw) {
    return {LayerKind::kConv2D, filters, kh, kw};
  }
  /// 1-D convolution over (channels, length, 1) inputs.
  static LayerSpec conv1d(std::size_t filters, std::size_t k) { return conv2d(filters, k, 1); }
  static LayerSpec max_pool(std::size_t ph, std::size_t pw) { return {LayerKind::kMaxPool2D, 0, ph, pw}; }
  static LayerSpec relu() { return {LayerKind::kRelu, 0, 0, 0}; }
  static LayerSpec tanh() { return {LayerKind::kTanh, 0, 0, 0}; }
  static LayerSpec sigmoid() { return {LayerKind::kSigmoid, 0, 0, 0}; }

  bool operator==(const LayerSpec&) const = default;
};

struct TrainingRecord {
  std::uint64_t seed = 0;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  std::vector<double> train_loss;
  std::vector<double> validation_loss;

  bool operator==(const TrainingRecord&) const = default;
};

/// Architecture, flat weights and training metadata of a sequential network.
class Model {
 public:
  Model() = default;
  Model(Shape input_shape, std::vector<LayerSpec> layers, std::string name = {});

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const Shape& output_shape_of(std::size_t layer) const { return shapes_[layer + 1]; }
  const Shape& output_shape() const { return shapes_.back(); }
  std::size_t input_size() const { return element_count(input_shape_); }
  std::size_t output_size() const { return element_count(shapes_.back()); }

  std::size_t param_count() const { return weights_.size(); }
  /// [begin, end) of a layer's parameters inside the flat weight vector.
  std::pair<std::size_t, std::size_t> param_range(std::size_t layer) const;
  std::size_t last_dense_layer() const;

  std::span<const double> weights() const { return weights_; }
  std::span<double> weights() { return weights_; }
  void set_weights(std::vector<double> w);

  /// He-style uniform weights scaled by fan-in; zero biases.
  void init_weights(std::uint64_t seed);

  const std::string& name() const { return name_; }
  TrainingRecord& record() { return record_; }
  const TrainingRecord& record() const { return record_; }

  /// batch: [n, input...] -> [n, output...]. Throws on shape mismatch.
  Tensor forward(const Tensor& batch, unsigned threads = 1) const;
  void forward_sample(std::span<const double> x, std::span<double> y) const;

  /// Mean binary cross-entropy over the batch and its gradient with respect
  /// to every weight. Requires a sigmoid head with scalar output.
  double loss_and_gradient(const Tensor& batch, std::span<const double> targets,
                           std::vector<double>& grad) const;
  double loss(const Tensor& batch, std::span<const double> targets) const;

  bool operator==(const Model& o) const {
    return input_shape_ == o.input_shape_ && layers_ == o.layers_ && weights_ == o.weights_ &&
           name_ == o.name_ && record_ == o.record_;
  }

 private:
  struct Workspace;
  double sample_gradient(std::span<const double> x, double target, Workspace& ws,
                         std::span<double> grad) const;
  void run_forward(std::span<const double> x, Workspace& ws) const;
  void check_bce_head() const;

  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;         // shapes_[0] = input, shapes_[i+1] = output of layer i
  std::vector<std::size_t> offsets_;  // parameter offset of each layer (size layers+1)
  std::vector<double> weights_;
  std::string name_;
  TrainingRecord record_;
};

/// Parameters of a layer stack without building it.
std::size_t count_params(const Shape& input_shape, const std::vector<LayerSpec>& layers);

void save_model(std::ostream& out, const Model& m);
Model load_model(std::istream& in);
void save_model(const std::string& path, const Model& m);
Model load_model(const std::string& path);

/// Training samples; storage is either owned rows or a loader callback.
class Dataset {
 public:
  using Loader = std::function<void(std::size_t, std::span<double>)>;

  explicit Dataset(Shape sample_shape) : shape_(std::move(sample_shape)) {}
  Dataset(Shape sample_shape, std::size_t n, Loader loader, std::vector<double> targets);

  void add(std::span<const double> x, double target);

  const Shape& sample_shape() const { return shape_; }
  std::size_t sample_size() const { return element_count(shape_); }
  std::size_t size() const { return targets_.size(); }
  bool empty() const { return targets_.empty(); }
  double target(std::size_t i) const { return targets_[i]; }
  const std::vector<double>& targets() const { return targets_; }
  void load(std::size_t i, std::span<double> out) const;

  /// View onto selected rows (shares storage).
  Dataset subset(const std::vector<std::size_t>& rows) const;
  /// Copies the given rows into a [n, sample...] tensor.
  Tensor batch(std::span<const std::size_t> rows) const;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> dense_ = std::make_shared<std::vector<double>>();
  Loader loader_;
  std::vector<double> targets_;
};

enum class Optimizer { kAdam, kSgd };

Optimizer optimizer_from_string(const std::string& s);

struct TrainConfig {
  Optimizer optimizer = Optimizer::kAdam;
  double learning_rate = 1e-3;
  double momentum = 0.9;  // SGD
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::uint64_t seed = 1;
  std::size_t patience = 0;  // 0 disables early stopping
  double validation_fraction = 0.0;

  void validate() const;
};

/// Only parameters in [begin, end) are updated; gradients elsewhere are zeroed.
struct TrainableRange {
  std::size_t begin = 0;
  std::size_t end = static_cast<std::size_t>(-1);
};

/// Minibatch training on mean BCE. Shuffling is seeded; the returned model
/// holds the weights of the epoch with the lowest validation loss (training
/// loss when no validation split is configured).
Model train(Model model, const Dataset& data, const TrainConfig& cfg, TrainableRange trainable = {});

/// Largest relative error between analytic and central-difference gradients.
struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

GradientCheck gradient_check(const Model& m, const Tensor& batch, std::span<const double> targets,
                             double step = 1e-5);

}  // namespace skipseg::nn
