#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "skipseg/common.hpp"
#include "skipseg/neural.hpp"
#include "skipseg/rng.hpp"

using namespace skipseg;
using namespace skipseg::nn;

namespace {

Tensor random_batch(const Shape& sample, std::size_t n, std::uint64_t seed) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  Tensor t(s);
  Rng rng(seed);
  for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

std::vector<double> random_targets(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> t(n);
  for (double& v : t) v = rng.uniform();
  return t;
}

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Loop-level forward pass of dense(h) -> tanh -> dense(1) -> sigmoid.
double reference_mlp(const std::vector<double>& w, const std::vector<double>& x, std::size_t h) {
  const std::size_t n = x.size();
  std::vector<double> hid(h);
  for (std::size_t j = 0; j < h; ++j) {
    double s = w[n * h + j];
    for (std::size_t i = 0; i < n; ++i) s += w[j * n + i] * x[i];
    hid[j] = std::tanh(s);
  }
  const std::size_t off = n * h + h;
  double z = w[off + h];
  for (std::size_t j = 0; j < h; ++j) z += w[off + j] * hid[j];
  return sig(z);
}

// Loop-level conv(F, kh x kw) -> relu -> pool(ph x pw) -> dense(1) -> sigmoid on a 1-channel image.
double reference_cnn(const std::vector<double>& w, const std::vector<double>& x, std::size_t H, std::size_t W,
                     std::size_t F, std::size_t kh, std::size_t kw, std::size_t ph, std::size_t pw) {
  const std::size_t OH = H - kh + 1, OW = W - kw + 1;
  std::vector<double> conv(F * OH * OW);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t r = 0; r < OH; ++r)
      for (std::size_t c = 0; c < OW; ++c) {
        double s = w[F * kh * kw + f];
        for (std::size_t a = 0; a < kh; ++a)
          for (std::size_t b = 0; b < kw; ++b) s += w[(f * kh + a) * kw + b] * x[(r + a) * W + (c + b)];
        conv[(f * OH + r) * OW + c] = std::max(0.0, s);
      }
  const std::size_t PH = OH / ph, PW = OW / pw;
  std::vector<double> pooled;
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t r = 0; r < PH; ++r)
      for (std::size_t c = 0; c < PW; ++c) {
        double m = -1e300;
        for (std::size_t a = 0; a < ph; ++a)
          for (std::size_t b = 0; b < pw; ++b) m = std::max(m, conv[(f * OH + r * ph + a) * OW + c * pw + b]);
        pooled.push_back(m);
      }
  const std::size_t off = F * kh * kw + F;
  double z = w[off + pooled.size()];
  for (std::size_t i = 0; i < pooled.size(); ++i) z += w[off + i] * pooled[i];
  return sig(z);
}

// Central differences computed here, independently of the library helper.
double max_fd_error(const Model& m, const Tensor& batch, const std::vector<double>& targets) {
  std::vector<double> grad;
  m.loss_and_gradient(batch, targets, grad);
  Model probe = m;
  double worst = 0.0;
  for (std::size_t k = 0; k < probe.param_count(); ++k) {
    const double w0 = probe.weights()[k];
    probe.weights()[k] = w0 + 1e-5;
    const double up = probe.loss(batch, targets);
    probe.weights()[k] = w0 - 1e-5;
    const double down = probe.loss(batch, targets);
    probe.weights()[k] = w0;
    const double num = (up - down) / 2e-5;
    worst = std::max(worst, std::abs(num - grad[k]) / std::max({std::abs(num), std::abs(grad[k]), 1e-6}));
  }
  return worst;
}

struct Case {
  const char* name;
  Shape input;
  std::vector<LayerSpec> layers;
};

std::vector<Case> layer_cases() {
  return {
      {"dense", {5}, {LayerSpec::dense(1), LayerSpec::sigmoid()}},
      {"dense+relu", {5}, {LayerSpec::dense(4), LayerSpec::relu(), LayerSpec::dense(1), LayerSpec::sigmoid()}},
      {"dense+tanh", {5}, {LayerSpec::dense(4), LayerSpec::tanh(), LayerSpec::dense(1), LayerSpec::sigmoid()}},
      {"dense+sigmoid", {5}, {LayerSpec::dense(3), LayerSpec::sigmoid(), LayerSpec::dense(1), LayerSpec::sigmoid()}},
      {"conv2d", {2, 6, 5}, {LayerSpec::conv2d(3, 3, 2), LayerSpec::tanh(), LayerSpec::dense(1), LayerSpec::sigmoid()}},
      {"conv1d", {2, 9, 1}, {LayerSpec::conv1d(3, 4), LayerSpec::tanh(), LayerSpec::dense(1), LayerSpec::sigmoid()}},
      {"maxpool", {1, 8, 6}, {LayerSpec::conv2d(2, 3, 3), LayerSpec::max_pool(2, 2), LayerSpec::dense(1), LayerSpec::sigmoid()}},
  };
}

}  // namespace

TEST_SUITE("neural") {
  TEST_CASE("zero weights give 0.5 and identity weights give sigmoid(input)") {
    Model zero({4}, {LayerSpec::dense(1), LayerSpec::sigmoid()});
    const auto out = zero.forward(random_batch({4}, 5, 1));
    for (double v : out.data) CHECK(v == 0.5);

    Model id({3}, {LayerSpec::dense(3), LayerSpec::sigmoid()});
    std::vector<double> w(id.param_count(), 0.0);
    for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
    id.set_weights(w);
    const auto x = random_batch({3}, 4, 2);
    const auto y = id.forward(x);
    for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(y.data[i] == doctest::Approx(sig(x.data[i])).epsilon(1e-15));
  }

  TEST_CASE("forward matches loop-level references") {
    Model mlp({6}, {LayerSpec::dense(5), LayerSpec::tanh(), LayerSpec::dense(1), LayerSpec::sigmoid()});
    mlp.init_weights(9);
    const auto x = random_batch({6}, 8, 3);
    const auto y = mlp.forward(x);
    const std::vector<double> w(mlp.weights().begin(), mlp.weights().end());
    for (std::size_t i = 0; i < 8; ++i) {
      const std::vector<double> xi(x.row(i).begin(), x.row(i).end());
      CHECK(std::abs(y.data[i] - reference_mlp(w, xi, 5)) < 1e-12);
    }

    Model cnn({1, 9, 7}, {LayerSpec::conv2d(2, 3, 2), LayerSpec::relu(), LayerSpec::max_pool(2, 3), LayerSpec::dense(1),
                          LayerSpec::sigmoid()});
    cnn.init_weights(4);
    const auto xc = random_batch({1, 9, 7}, 6, 5);
    const auto yc = cnn.forward(xc, 2);
    const std::vector<double> wc(cnn.weights().begin(), cnn.weights().end());
    for (std::size_t i = 0; i < 6; ++i) {
      const std::vector<double> xi(xc.row(i).begin(), xc.row(i).end());
      CHECK(std::abs(yc.data[i] - reference_cnn(wc, xi, 9, 7, 2, 3, 2, 2, 3)) < 1e-12);
    }
  }

  TEST_CASE("shape mismatch names the layer") {
    Model m({4}, {LayerSpec::dense(2), LayerSpec::sigmoid()});
    try {
      m.forward(random_batch({5}, 2, 1));
      FAIL("expected shape error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
    }
    CHECK_THROWS_AS(Model({1, 3, 3}, {LayerSpec::conv2d(1, 4, 1)}), Error);
  }

  TEST_CASE("every layer type passes the finite-difference check on 10 seeds") {
    for (const auto& c : layer_cases()) {
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Model m(c.input, c.layers);
        m.init_weights(seed + 1);
        const auto batch = random_batch(c.input, 4, 100 + seed);
        const auto targets = random_targets(4, 200 + seed);
        INFO(c.name << " seed " << seed);
        CHECK(max_fd_error(m, batch, targets) < 1e-4);
        CHECK(gradient_check(m, batch, targets).max_relative_error < 1e-4);
      }
    }
  }

  TEST_CASE("gradient vanishes at a saturated optimum and is invariant to batch duplication") {
    Model m({1}, {LayerSpec::dense(1), LayerSpec::sigmoid()});
    m.set_weights({60.0, 0.0});
    Tensor x({2, 1}, {1.0, 2.0});
    std::vector<double> g;
    m.loss_and_gradient(x, std::vector<double>{1.0, 1.0}, g);
    CHECK(std::hypot(g[0], g[1]) < 1e-6);

    Model r({3}, {LayerSpec::dense(2), LayerSpec::relu(), LayerSpec::dense(1), LayerSpec::sigmoid()});
    r.init_weights(3);
    const auto b = random_batch({3}, 5, 8);
    const auto t = random_targets(5, 9);
    Tensor twice({10, 3});
    std::copy(b.data.begin(), b.data.end(), twice.data.begin());
    std::copy(b.data.begin(), b.data.end(), twice.data.begin() + 15);
    std::vector<double> t2 = t;
    t2.insert(t2.end(), t.begin(), t.end());
    std::vector<double> g1, g2;
    r.loss_and_gradient(b, t, g1);
    r.loss_and_gradient(twice, t2, g2);
    for (std::size_t k = 0; k < g1.size(); ++k) CHECK(g1[k] == doctest::Approx(g2[k]).epsilon(1e-13));
  }

  TEST_CASE("max-pool ties route the gradient to the lowest index") {
    Model m({2, 1, 2}, {LayerSpec::conv2d(1, 1, 1), LayerSpec::max_pool(1, 2), LayerSpec::dense(1), LayerSpec::sigmoid()});
    m.set_weights({1.0, 1.0, 0.0, 1.0, 0.0});
    // channel 0 = [1, 0], channel 1 = [0, 1]: both conv outputs equal 1.
    Tensor x({1, 2, 1, 2}, {1.0, 0.0, 0.0, 1.0});
    std::vector<double> g;
    m.loss_and_gradient(x, std::vector<double>{0.0}, g);
    CHECK(g[0] != 0.0);
    CHECK(g[1] == 0.0);
  }

  TEST_CASE("delta kernel is a cropped identity and pooling dominates its inputs") {
    Model m({1, 5, 4}, {LayerSpec::conv2d(1, 3, 3)});
    std::vector<double> w(m.param_count(), 0.0);
    w[4] = 1.0;
    m.set_weights(w);
    const auto x = random_batch({1, 5, 4}, 1, 4);
    const auto y = m.forward(x);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 2; ++c) CHECK(y.data[r * 2 + c] == x.data[(r + 1) * 4 + c + 1]);

    Model p({2, 4, 6}, {LayerSpec::max_pool(2, 3)});
    const auto xp = random_batch({2, 4, 6}, 1, 6);
    const auto yp = p.forward(xp);
    for (std::size_t ch = 0; ch < 2; ++ch)
      for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 6; ++c) CHECK(yp.data[(ch * 2 + r / 2) * 2 + c / 3] >= xp.data[(ch * 4 + r) * 6 + c]);
  }

  TEST_CASE("training separates a linearly separable toy set deterministically") {
    Dataset data({2});
    Rng rng(12);
    for (int i = 0; i < 200; ++i) {
      const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1);
      if (std::abs(a + b) < 0.1) continue;
      data.add(std::vector<double>{a, b}, a + b > 0 ? 1.0 : 0.0);
    }
    Model m({2}, {LayerSpec::dense(1), LayerSpec::sigmoid()});
    m.init_weights(1);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.learning_rate = 0.05;
    const auto trained = train(m, data, cfg);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::vector<double> x(2), y(1);
      data.load(i, x);
      trained.forward_sample(x, y);
      correct += (y[0] > 0.5) == (data.target(i) > 0.5);
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(data.size()) >= 0.99);
    CHECK(train(m, data, cfg) == trained);

    TrainConfig sgd = cfg;
    sgd.optimizer = Optimizer::kSgd;
    sgd.epochs = 5;
    sgd.validation_fraction = 0.2;
    const auto s = train(m, data, sgd);
    CHECK(s.record().validation_loss.size() == 5);
  }

  TEST_CASE("configuration errors and divergence") {
    Dataset data({1});
    data.add(std::vector<double>{1.0}, 1.0);
    data.add(std::vector<double>{-1.0}, 0.0);
    Model m({1}, {LayerSpec::dense(1), LayerSpec::sigmoid()});
    TrainConfig zero;
    zero.epochs = 0;
    CHECK_THROWS_AS(train(m, data, zero), Error);
    TrainConfig bad_lr;
    bad_lr.learning_rate = 0.0;
    CHECK_THROWS_AS(train(m, data, bad_lr), Error);
    CHECK_THROWS_AS(train(m, Dataset({1}), TrainConfig{}), Error);

    Model deep({1}, {LayerSpec::dense(4), LayerSpec::dense(4), LayerSpec::dense(4), LayerSpec::dense(1), LayerSpec::sigmoid()});
    deep.init_weights(2);
    TrainConfig wild;
    wild.optimizer = Optimizer::kSgd;
    wild.learning_rate = 1e150;
    wild.epochs = 5;
    try {
      train(deep, data, wild);
      FAIL("expected divergence");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
  }

  TEST_CASE("trainable range freezes every other weight") {
    Dataset data({3});
    Rng rng(2);
    for (int i = 0; i < 40; ++i) data.add(std::vector<double>{rng.uniform(), rng.uniform(), rng.uniform()}, rng.uniform() < 0.5);
    Model m({3}, {LayerSpec::dense(4), LayerSpec::relu(), LayerSpec::dense(1), LayerSpec::sigmoid()});
    m.init_weights(5);
    const auto [b, e] = m.param_range(m.last_dense_layer());
    TrainConfig cfg;
    cfg.epochs = 10;
    const auto t = train(m, data, cfg, TrainableRange{b, e});
    bool changed = false;
    for (std::size_t k = 0; k < m.param_count(); ++k) {
      if (k >= b && k < e) changed |= t.weights()[k] != m.weights()[k];
      else CHECK(t.weights()[k] == m.weights()[k]);
    }
    CHECK(changed);
  }

  TEST_CASE("model files round-trip bit-exactly") {
    Model m({1, 6, 4}, {LayerSpec::conv2d(2, 2, 2), LayerSpec::relu(), LayerSpec::max_pool(2, 1), LayerSpec::dense(3),
                        LayerSpec::tanh(), LayerSpec::dense(1), LayerSpec::sigmoid()},
            "roundtrip");
    m.init_weights(77);
    m.weights()[0] = 1.0 / 3.0;
    m.record().train_loss = {0.5, 0.25};
    m.record().seed = 77;
    std::stringstream ss;
    save_model(ss, m);
    const std::string text = ss.str();
    const auto back = load_model(ss);
    CHECK(back == m);
    std::stringstream again;
    save_model(again, back);
    CHECK(again.str() == text);
    std::stringstream junk("{\"format\":\"other\"}");
    CHECK_THROWS_AS(load_model(junk), Error);
  }

  TEST_CASE("parameter counting") {
    CHECK(count_params({60}, {LayerSpec::dense(64), LayerSpec::relu(), LayerSpec::dense(64), LayerSpec::relu(),
                              LayerSpec::dense(1), LayerSpec::sigmoid()}) == 60 * 64 + 64 + 64 * 64 + 64 + 64 + 1);
  }
}
