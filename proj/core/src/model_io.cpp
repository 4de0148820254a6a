// Model files: JSON header with the architecture and training record, and
// the weights as a base64 blob of little-endian float64 values.

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "skipseg/common.hpp"
#include "skipseg/neural.hpp"

namespace skipseg::nn {

using nlohmann::json;

namespace {

constexpr int kModelFormatVersion = 1;
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

static_assert(std::endian::native == std::endian::little, "weight blobs assume a little-endian host");

std::string base64_encode(const std::string& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const auto v = (static_cast<unsigned char>(bytes[i]) << 16) | (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                   static_cast<unsigned char>(bytes[i + 2]);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (const std::size_t rest = bytes.size() - i; rest > 0) {
    unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    if (rest == 2) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(const std::string& text) {
  int table[256];
  std::fill(std::begin(table), std::end(table), -1);
  for (int k = 0; k < 64; ++k) table[static_cast<unsigned char>(kAlphabet[k])] = k;
  if (text.size() % 4 != 0) throw ParseError("model weights: base64 length not a multiple of 4");
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    unsigned v = 0;
    int pad = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        ++pad;
        v <<= 6;
        continue;
      }
      const int d = table[static_cast<unsigned char>(c)];
      if (d < 0 || pad) throw ParseError("model weights: invalid base64");
      v = (v << 6) | static_cast<unsigned>(d);
    }
    out += static_cast<char>((v >> 16) & 255);
    if (pad < 2) out += static_cast<char>((v >> 8) & 255);
    if (pad < 1) out += static_cast<char>(v & 255);
  }
  return out;
}

json layer_to_json(const LayerSpec& l) {
  json j{{"type", to_string(l.kind)}};
  switch (l.kind) {
    case LayerKind::kDense: j["units"] = l.units; break;
    case LayerKind::kConv2D: j["filters"] = l.units; j["kernel"] = {l.kernel_h, l.kernel_w}; break;
    case LayerKind::kMaxPool2D: j["pool"] = {l.kernel_h, l.kernel_w}; break;
    default: break;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "dense") return LayerSpec::dense(j.at("units").get<std::size_t>());
  if (type == "conv2d") {
    const auto k = j.at("kernel").get<std::vector<std::size_t>>();
    if (k.size() != 2) throw ParseError("conv2d kernel must have two extents");
    return LayerSpec::conv2d(j.at("filters").get<std::size_t>(), k[0], k[1]);
  }
  if (type == "maxpool2d") {
    const auto p = j.at("pool").get<std::vector<std::size_t>>();
    if (p.size() != 2) throw ParseError("maxpool2d window must have two extents");
    return LayerSpec::max_pool(p[0], p[1]);
  }
  if (type == "relu") return LayerSpec::relu();
  if (type == "tanh") return LayerSpec::tanh();
  if (type == "sigmoid") return LayerSpec::sigmoid();
  throw ParseError("unknown layer type '" + type + "'");
}

}  // namespace

void save_model(std::ostream& out, const Model& m) {
  json layers = json::array();
  for (const auto& l : m.layers()) layers.push_back(layer_to_json(l));
  const auto w = m.weights();
  std::string bytes(w.size() * sizeof(double), '\0');
  std::memcpy(bytes.data(), w.data(), bytes.size());
  const auto& rec = m.record();
  json doc{{"format", "skipseg-model"},
           {"version", kModelFormatVersion},
           {"name", m.name()},
           {"input_shape", m.input_shape()},
           {"layers", std::move(layers)},
           {"param_count", m.param_count()},
           {"training",
            {{"seed", rec.seed},
             {"epochs_run", rec.epochs_run},
             {"best_epoch", rec.best_epoch},
             {"train_loss", rec.train_loss},
             {"validation_loss", rec.validation_loss}}},
           {"weights", {{"encoding", "base64-f64le"}, {"data", base64_encode(bytes)}}}};
  out << doc.dump(1) << '\n';
}

Model load_model(std::istream& in) {
  try {
    const json doc = json::parse(in);
    if (doc.value("format", "") != "skipseg-model") throw ParseError("not a model file");
    if (doc.at("version").get<int>() != kModelFormatVersion)
      throw ParseError("unsupported model file version " + std::to_string(doc.at("version").get<int>()));
    std::vector<LayerSpec> layers;
    for (const auto& l : doc.at("layers")) layers.push_back(layer_from_json(l));
    Model m(doc.at("input_shape").get<Shape>(), std::move(layers), doc.value("name", std::string{}));
    const auto& wj = doc.at("weights");
    if (wj.at("encoding").get<std::string>() != "base64-f64le") throw ParseError("unsupported weight encoding");
    const std::string bytes = base64_decode(wj.at("data").get<std::string>());
    if (bytes.size() != m.param_count() * sizeof(double))
      throw ParseError("weight blob holds " + std::to_string(bytes.size() / sizeof(double)) + " values, architecture needs " +
                       std::to_string(m.param_count()));
    std::vector<double> w(m.param_count());
    std::memcpy(w.data(), bytes.data(), bytes.size());
    m.set_weights(std::move(w));
    if (doc.contains("training")) {
      const auto& t = doc.at("training");
      auto& rec = m.record();
      rec.seed = t.value("seed", std::uint64_t{0});
      rec.epochs_run = t.value("epochs_run", std::size_t{0});
      rec.best_epoch = t.value("best_epoch", std::size_t{0});
      rec.train_loss = t.value("train_loss", std::vector<double>{});
      rec.validation_loss = t.value("validation_loss", std::vector<double>{});
    }
    return m;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& ex) {
    throw ParseError(std::string("model file: ") + ex.what());
  }
}

void save_model(const std::string& path, const Model& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file " + path);
  save_model(out, m);
}

Model load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file " + path);
  return load_model(in);
}

}  // namespace skipseg::nn
