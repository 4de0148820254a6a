#include "skipseg/neural.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "skipseg/common.hpp"
#include "skipseg/parallel.hpp"
#include "skipseg/rng.hpp"

namespace skipseg::nn {

std::size_t element_count(const Shape& s) {
  if (s.empty()) return 0;
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != element_count(shape))
    throw Error("tensor: " + std::to_string(data.size()) + " values do not fill shape " + shape_string(shape));
}

std::span<const double> Tensor::row(std::size_t i) const {
  const std::size_t stride = data.size() / shape.front();
  return std::span<const double>(data).subspan(i * stride, stride);
}

std::span<double> Tensor::row(std::size_t i) {
  const std::size_t stride = data.size() / shape.front();
  return std::span<double>(data).subspan(i * stride, stride);
}

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv2D: return "conv2d";
    case LayerKind::kMaxPool2D: return "maxpool2d";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kTanh: return "tanh";
    case LayerKind::kSigmoid: return "sigmoid";
  }
  return "?";
}

namespace {

std::string layer_name(std::size_t i, const LayerSpec& l) {
  return "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
}

Shape layer_output_shape(std::size_t index, const LayerSpec& l, const Shape& in) {
  switch (l.kind) {
    case LayerKind::kDense:
      if (l.units == 0) throw Error(layer_name(index, l) + ": zero units");
      return {l.units};
    case LayerKind::kConv2D:
      if (in.size() != 3) throw Error(layer_name(index, l) + ": expects (channels, height, width) input, got " + shape_string(in));
      if (l.units == 0 || l.kernel_h == 0 || l.kernel_w == 0) throw Error(layer_name(index, l) + ": empty kernel");
      if (l.kernel_h > in[1] || l.kernel_w > in[2])
        throw Error(layer_name(index, l) + ": kernel larger than input " + shape_string(in));
      return {l.units, in[1] - l.kernel_h + 1, in[2] - l.kernel_w + 1};
    case LayerKind::kMaxPool2D:
      if (in.size() != 3) throw Error(layer_name(index, l) + ": expects (channels, height, width) input, got " + shape_string(in));
      if (l.kernel_h == 0 || l.kernel_w == 0 || in[1] / l.kernel_h == 0 || in[2] / l.kernel_w == 0)
        throw Error(layer_name(index, l) + ": pooling window does not fit input " + shape_string(in));
      return {in[0], in[1] / l.kernel_h, in[2] / l.kernel_w};
    default:
      return in;
  }
}

std::size_t layer_params(const LayerSpec& l, const Shape& in) {
  switch (l.kind) {
    case LayerKind::kDense: return element_count(in) * l.units + l.units;
    case LayerKind::kConv2D: return l.units * in[0] * l.kernel_h * l.kernel_w + l.units;
    default: return 0;
  }
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Binary cross-entropy computed from the logit for numerical stability.
double bce_from_logit(double z, double t) {
  return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

std::size_t count_params(const Shape& input_shape, const std::vector<LayerSpec>& layers) {
  Shape s = input_shape;
  std::size_t total = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    total += layer_params(layers[i], s);
    s = layer_output_shape(i, layers[i], s);
  }
  return total;
}

Model::Model(Shape input_shape, std::vector<LayerSpec> layers, std::string name)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), name_(std::move(name)) {
  if (input_shape_.empty() || element_count(input_shape_) == 0) throw Error("model: empty input shape");
  if (layers_.empty()) throw Error("model: no layers");
  shapes_.push_back(input_shape_);
  offsets_.push_back(0);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    offsets_.push_back(offsets_.back() + layer_params(layers_[i], shapes_.back()));
    shapes_.push_back(layer_output_shape(i, layers_[i], shapes_.back()));
  }
  weights_.assign(offsets_.back(), 0.0);
}

std::pair<std::size_t, std::size_t> Model::param_range(std::size_t layer) const {
  return {offsets_.at(layer), offsets_.at(layer + 1)};
}

std::size_t Model::last_dense_layer() const {
  for (std::size_t i = layers_.size(); i-- > 0;)
    if (layers_[i].kind == LayerKind::kDense) return i;
  throw Error("model has no dense layer");
}

void Model::set_weights(std::vector<double> w) {
  if (w.size() != weights_.size())
    throw Error("model: expected " + std::to_string(weights_.size()) + " weights, got " + std::to_string(w.size()));
  weights_ = std::move(w);
}

void Model::init_weights(std::uint64_t seed) {
  Rng rng(seed);
  std::fill(weights_.begin(), weights_.end(), 0.0);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const Shape& in = shapes_[i];
    std::size_t fan_in = 0, n_weights = 0;
    if (l.kind == LayerKind::kDense) {
      fan_in = element_count(in);
      n_weights = fan_in * l.units;
    } else if (l.kind == LayerKind::kConv2D) {
      fan_in = in[0] * l.kernel_h * l.kernel_w;
      n_weights = l.units * fan_in;
    } else {
      continue;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t k = 0; k < n_weights; ++k) weights_[offsets_[i] + k] = rng.uniform(-limit, limit);
  }
}

struct Model::Workspace {
  std::vector<std::vector<double>> act;           // act[0] = input, act[i+1] = output of layer i
  std::vector<std::vector<std::size_t>> argmax;   // per pooling layer
  std::vector<double> g_out, g_in;
};

void Model::run_forward(std::span<const double> x, Workspace& ws) const {
  const std::size_t n_layers = layers_.size();
  ws.act.resize(n_layers + 1);
  ws.argmax.resize(n_layers);
  ws.act[0].assign(x.begin(), x.end());
  for (std::size_t li = 0; li < n_layers; ++li) {
    const auto& l = layers_[li];
    const Shape& is = shapes_[li];
    const Shape& os = shapes_[li + 1];
    const std::vector<double>& in = ws.act[li];
    std::vector<double>& out = ws.act[li + 1];
    out.assign(element_count(os), 0.0);
    const double* w = weights_.data() + offsets_[li];
    switch (l.kind) {
      case LayerKind::kDense: {
        const std::size_t n_in = in.size();
        const double* bias = w + n_in * l.units;
        for (std::size_t o = 0; o < l.units; ++o) {
          const double* row = w + o * n_in;
          double s = bias[o];
          for (std::size_t k = 0; k < n_in; ++k) s += row[k] * in[k];
          out[o] = s;
        }
        break;
      }
      case LayerKind::kConv2D: {
        const std::size_t C = is[0], H = is[1], W = is[2];
        const std::size_t OH = os[1], OW = os[2], kh = l.kernel_h, kw = l.kernel_w;
        const double* bias = w + l.units * C * kh * kw;
        for (std::size_t f = 0; f < l.units; ++f) {
          double* o_plane = out.data() + f * OH * OW;
          std::fill(o_plane, o_plane + OH * OW, bias[f]);
          for (std::size_t c = 0; c < C; ++c) {
            const double* i_plane = in.data() + c * H * W;
            const double* k = w + ((f * C + c) * kh) * kw;
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t b = 0; b < kw; ++b) {
                const double kv = k[a * kw + b];
                for (std::size_t oh = 0; oh < OH; ++oh) {
                  const double* src = i_plane + (oh + a) * W + b;
                  double* dst = o_plane + oh * OW;
                  for (std::size_t ow = 0; ow < OW; ++ow) dst[ow] += kv * src[ow];
                }
              }
          }
        }
        break;
      }
      case LayerKind::kMaxPool2D: {
        const std::size_t C = is[0], H = is[1], W = is[2];
        const std::size_t OH = os[1], OW = os[2], ph = l.kernel_h, pw = l.kernel_w;
        auto& am = ws.argmax[li];
        am.assign(out.size(), 0);
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t oh = 0; oh < OH; ++oh)
            for (std::size_t ow = 0; ow < OW; ++ow) {
              std::size_t best = c * H * W + (oh * ph) * W + ow * pw;
              for (std::size_t a = 0; a < ph; ++a)
                for (std::size_t b = 0; b < pw; ++b) {
                  const std::size_t idx = c * H * W + (oh * ph + a) * W + (ow * pw + b);
                  if (in[idx] > in[best]) best = idx;  // ties keep the lowest index
                }
              const std::size_t o = (c * OH + oh) * OW + ow;
              out[o] = in[best];
              am[o] = best;
            }
        break;
      }
      case LayerKind::kRelu:
        for (std::size_t k = 0; k < in.size(); ++k) out[k] = in[k] > 0.0 ? in[k] : 0.0;
        break;
      case LayerKind::kTanh:
        for (std::size_t k = 0; k < in.size(); ++k) out[k] = std::tanh(in[k]);
        break;
      case LayerKind::kSigmoid:
        for (std::size_t k = 0; k < in.size(); ++k) out[k] = sigmoid(in[k]);
        break;
    }
  }
}

void Model::forward_sample(std::span<const double> x, std::span<double> y) const {
  if (x.size() != input_size())
    throw Error("forward: input of " + std::to_string(x.size()) + " values does not match layer 0 (" +
                to_string(layers_.front().kind) + ") input shape " + shape_string(input_shape_));
  Workspace ws;
  run_forward(x, ws);
  std::copy(ws.act.back().begin(), ws.act.back().end(), y.begin());
}

Tensor Model::forward(const Tensor& batch, unsigned threads) const {
  if (batch.shape.empty() || element_count(batch.shape) != batch.rows() * input_size() ||
      !std::equal(batch.shape.begin() + 1, batch.shape.end(), input_shape_.begin(), input_shape_.end())) {
    throw Error("forward: batch shape " + shape_string(batch.shape) + " does not match layer 0 (" +
                to_string(layers_.front().kind) + ") input shape " + shape_string(input_shape_));
  }
  Shape out_shape{batch.rows()};
  out_shape.insert(out_shape.end(), output_shape().begin(), output_shape().end());
  Tensor out(out_shape);
  parallel_for(batch.rows(), threads, [&](std::size_t i) {
    Workspace ws;
    run_forward(batch.row(i), ws);
    std::copy(ws.act.back().begin(), ws.act.back().end(), out.row(i).begin());
  });
  return out;
}

void Model::check_bce_head() const {
  if (layers_.back().kind != LayerKind::kSigmoid || output_size() != 1)
    throw Error("binary cross-entropy requires a scalar sigmoid output");
}

double Model::sample_gradient(std::span<const double> x, double target, Workspace& ws,
                              std::span<double> grad) const {
  run_forward(x, ws);
  const std::size_t n_layers = layers_.size();
  const double logit = ws.act[n_layers - 1][0];
  const double loss = bce_from_logit(logit, target);

  // d(loss)/d(logit) for a sigmoid head.
  ws.g_out.assign(1, ws.act[n_layers][0] - target);
  for (std::size_t li = n_layers - 1; li-- > 0;) {
    const auto& l = layers_[li];
    const Shape& is = shapes_[li];
    const Shape& os = shapes_[li + 1];
    const std::vector<double>& in = ws.act[li];
    const std::vector<double>& out = ws.act[li + 1];
    const std::vector<double>& g = ws.g_out;
    ws.g_in.assign(in.size(), 0.0);
    std::vector<double>& gi = ws.g_in;
    const double* w = weights_.data() + offsets_[li];
    double* gw = grad.data() + offsets_[li];
    switch (l.kind) {
      case LayerKind::kDense: {
        const std::size_t n_in = in.size();
        double* gb = gw + n_in * l.units;
        for (std::size_t o = 0; o < l.units; ++o) {
          const double go = g[o];
          if (go == 0.0) continue;
          gb[o] += go;
          const double* row = w + o * n_in;
          double* grow = gw + o * n_in;
          for (std::size_t k = 0; k < n_in; ++k) {
            grow[k] += go * in[k];
            gi[k] += go * row[k];
          }
        }
        break;
      }
      case LayerKind::kConv2D: {
        const std::size_t C = is[0], H = is[1], W = is[2];
        const std::size_t OH = os[1], OW = os[2], kh = l.kernel_h, kw = l.kernel_w;
        double* gb = gw + l.units * C * kh * kw;
        for (std::size_t f = 0; f < l.units; ++f) {
          const double* g_plane = g.data() + f * OH * OW;
          for (std::size_t k = 0; k < OH * OW; ++k) gb[f] += g_plane[k];
          for (std::size_t c = 0; c < C; ++c) {
            const double* i_plane = in.data() + c * H * W;
            double* gi_plane = gi.data() + c * H * W;
            const double* k = w + ((f * C + c) * kh) * kw;
            double* gk = gw + ((f * C + c) * kh) * kw;
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t b = 0; b < kw; ++b) {
                const double kv = k[a * kw + b];
                double acc = 0.0;
                for (std::size_t oh = 0; oh < OH; ++oh) {
                  const double* src = i_plane + (oh + a) * W + b;
                  double* dst = gi_plane + (oh + a) * W + b;
                  const double* gr = g_plane + oh * OW;
                  for (std::size_t ow = 0; ow < OW; ++ow) {
                    acc += gr[ow] * src[ow];
                    dst[ow] += kv * gr[ow];
                  }
                }
                gk[a * kw + b] += acc;
              }
          }
        }
        break;
      }
      case LayerKind::kMaxPool2D: {
        const auto& am = ws.argmax[li];
        for (std::size_t o = 0; o < g.size(); ++o) gi[am[o]] += g[o];
        break;
      }
      case LayerKind::kRelu:
        for (std::size_t k = 0; k < in.size(); ++k) gi[k] = in[k] > 0.0 ? g[k] : 0.0;
        break;
      case LayerKind::kTanh:
        for (std::size_t k = 0; k < in.size(); ++k) gi[k] = g[k] * (1.0 - out[k] * out[k]);
        break;
      case LayerKind::kSigmoid:
        for (std::size_t k = 0; k < in.size(); ++k) gi[k] = g[k] * out[k] * (1.0 - out[k]);
        break;
    }
    std::swap(ws.g_out, ws.g_in);
  }
  return loss;
}

double Model::loss_and_gradient(const Tensor& batch, std::span<const double> targets,
                                std::vector<double>& grad) const {
  check_bce_head();
  if (batch.rows() != targets.size()) throw Error("loss: batch and target counts differ");
  if (batch.rows() == 0) throw Error("loss: empty batch");
  if (element_count(batch.shape) != batch.rows() * input_size())
    throw Error("loss: batch shape " + shape_string(batch.shape) + " does not match input " + shape_string(input_shape_));
  grad.assign(weights_.size(), 0.0);
  Workspace ws;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    if (!(targets[i] >= 0.0 && targets[i] <= 1.0)) throw Error("loss: target outside [0,1]");
    total += sample_gradient(batch.row(i), targets[i], ws, grad);
  }
  const double inv = 1.0 / static_cast<double>(batch.rows());
  for (double& g : grad) g *= inv;
  const double loss = total * inv;
  if (!std::isfinite(loss)) throw Error("loss: non-finite value");
  return loss;
}

double Model::loss(const Tensor& batch, std::span<const double> targets) const {
  check_bce_head();
  if (batch.rows() != targets.size()) throw Error("loss: batch and target counts differ");
  Workspace ws;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    run_forward(batch.row(i), ws);
    total += bce_from_logit(ws.act[layers_.size() - 1][0], targets[i]);
  }
  return total / static_cast<double>(batch.rows());
}

GradientCheck gradient_check(const Model& m, const Tensor& batch, std::span<const double> targets, double step) {
  std::vector<double> analytic;
  m.loss_and_gradient(batch, targets, analytic);
  Model probe = m;
  GradientCheck r;
  for (std::size_t k = 0; k < probe.param_count(); ++k) {
    const double w0 = probe.weights()[k];
    probe.weights()[k] = w0 + step;
    const double up = probe.loss(batch, targets);
    probe.weights()[k] = w0 - step;
    const double down = probe.loss(batch, targets);
    probe.weights()[k] = w0;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[k]), 1e-6});
    const double rel = std::abs(numeric - analytic[k]) / denom;
    if (rel > r.max_relative_error) {
      r.max_relative_error = rel;
      r.worst_index = k;
    }
    ++r.checked;
  }
  return r;
}

Dataset::Dataset(Shape sample_shape, std::size_t n, Loader loader, std::vector<double> targets)
    : shape_(std::move(sample_shape)), loader_(std::move(loader)), targets_(std::move(targets)) {
  if (targets_.size() != n) throw Error("dataset: target count does not match sample count");
}

void Dataset::add(std::span<const double> x, double target) {
  if (loader_) throw Error("dataset: cannot append to a loader-backed dataset");
  if (x.size() != sample_size()) throw Error("dataset: sample size mismatch");
  dense_->insert(dense_->end(), x.begin(), x.end());
  targets_.push_back(target);
}

void Dataset::load(std::size_t i, std::span<double> out) const {
  if (loader_) {
    loader_(i, out);
    return;
  }
  const std::size_t n = sample_size();
  std::copy_n(dense_->begin() + static_cast<std::ptrdiff_t>(i * n), n, out.begin());
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  std::vector<double> t;
  t.reserve(rows.size());
  for (std::size_t r : rows) t.push_back(targets_.at(r));
  Dataset parent = *this;
  return Dataset(shape_, rows.size(),
                 [parent = std::move(parent), rows](std::size_t i, std::span<double> out) { parent.load(rows[i], out); },
                 std::move(t));
}

Tensor Dataset::batch(std::span<const std::size_t> rows) const {
  Shape s{rows.size()};
  s.insert(s.end(), shape_.begin(), shape_.end());
  Tensor t(s);
  for (std::size_t i = 0; i < rows.size(); ++i) load(rows[i], t.row(i));
  return t;
}

Optimizer optimizer_from_string(const std::string& s) {
  if (s == "adam") return Optimizer::kAdam;
  if (s == "sgd") return Optimizer::kSgd;
  throw Error("unknown optimizer '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("train: learning rate must be positive");
  if (epochs < 1) throw Error("train: epochs must be at least 1");
  if (batch_size < 1) throw Error("train: batch size must be at least 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw Error("train: validation fraction must lie in [0,1)");
}

Model train(Model model, const Dataset& data, const TrainConfig& cfg, TrainableRange trainable) {
  cfg.validate();
  if (data.empty()) throw Error("train: empty dataset");
  if (data.sample_size() != model.input_size())
    throw Error("train: sample shape " + shape_string(data.sample_shape()) + " does not match model input " +
                shape_string(model.input_shape()));
  const std::size_t n_params = model.param_count();
  trainable.end = std::min(trainable.end, n_params);

  Rng rng = Rng::substream(cfg.seed, 0x7472);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(data.size())));
  if (n_val >= data.size()) n_val = data.size() - 1;
  std::vector<std::size_t> val(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  std::vector<std::size_t> fit(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));

  std::vector<double> m1(n_params, 0.0), m2(n_params, 0.0), grad;
  std::vector<double> best = std::vector<double>(model.weights().begin(), model.weights().end());
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t step = 0, since_best = 0;
  TrainingRecord rec;
  rec.seed = cfg.seed;

  auto eval = [&](const std::vector<std::size_t>& rows) {
    double s = 0.0;
    for (std::size_t b = 0; b < rows.size(); b += 256) {
      const std::size_t e = std::min(rows.size(), b + 256);
      const std::span<const std::size_t> chunk(rows.data() + b, e - b);
      std::vector<double> t;
      for (std::size_t r : chunk) t.push_back(data.target(r));
      s += model.loss(data.batch(chunk), t) * static_cast<double>(chunk.size());
    }
    return s / static_cast<double>(rows.size());
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(fit));
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < fit.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(fit.size(), b + cfg.batch_size);
      const std::span<const std::size_t> rows(fit.data() + b, e - b);
      std::vector<double> targets;
      targets.reserve(rows.size());
      for (std::size_t r : rows) targets.push_back(data.target(r));
      double loss;
      try {
        loss = model.loss_and_gradient(data.batch(rows), targets, grad);
      } catch (const Error& ex) {
        throw Error("train: epoch " + std::to_string(epoch) + ": " + ex.what());
      }
      epoch_loss += loss * static_cast<double>(rows.size());
      ++step;
      auto w = model.weights();
      if (cfg.optimizer == Optimizer::kAdam) {
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
        for (std::size_t k = trainable.begin; k < trainable.end; ++k) {
          m1[k] = cfg.beta1 * m1[k] + (1.0 - cfg.beta1) * grad[k];
          m2[k] = cfg.beta2 * m2[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
          w[k] -= cfg.learning_rate * (m1[k] / c1) / (std::sqrt(m2[k] / c2) + cfg.epsilon);
        }
      } else {
        for (std::size_t k = trainable.begin; k < trainable.end; ++k) {
          m1[k] = cfg.momentum * m1[k] + grad[k];
          w[k] -= cfg.learning_rate * m1[k];
        }
      }
    }
    epoch_loss /= static_cast<double>(fit.size());
    if (!std::isfinite(epoch_loss)) throw Error("train: loss diverged at epoch " + std::to_string(epoch));
    for (double v : model.weights())
      if (!std::isfinite(v)) throw Error("train: weights diverged at epoch " + std::to_string(epoch));
    rec.train_loss.push_back(epoch_loss);
    const double monitored = val.empty() ? epoch_loss : eval(val);
    if (!val.empty()) rec.validation_loss.push_back(monitored);
    rec.epochs_run = epoch + 1;
    if (monitored < best_loss) {
      best_loss = monitored;
      best.assign(model.weights().begin(), model.weights().end());
      rec.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  model.set_weights(std::move(best));
  model.record() = std::move(rec);
  return model;
}

}  // namespace skipseg::nn
