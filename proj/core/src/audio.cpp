#include "skipseg/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>

#include <fftw3.h>

#include "skipseg/rng.hpp"

namespace skipseg {

std::vector<double> MelSpectrogram::frame_times() const {
  std::vector<double> t(n_frames());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = frame_time(i);
  return t;
}

void MelSpectrogram::validate() const {
  if (!(frame_rate_hz > 0.0)) throw Error("spectrogram '" + track_id + "': frame rate must be positive");
  if (n_mels == 0 || frames.size() % n_mels != 0) throw Error("spectrogram '" + track_id + "': ragged frame matrix");
  for (double v : frames)
    if (!std::isfinite(v)) throw Error("spectrogram '" + track_id + "': non-finite value");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_band_centers(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin_hz), hi = hz_to_mel(cfg.upper_hz());
  std::vector<double> c(cfg.n_mels);
  for (std::size_t m = 0; m < cfg.n_mels; ++m)
    c[m] = mel_to_hz(lo + (hi - lo) * static_cast<double>(m + 1) / static_cast<double>(cfg.n_mels + 1));
  return c;
}

std::vector<std::vector<double>> mel_filterbank(const MelConfig& cfg) {
  if (cfg.n_mels == 0) throw Error("mel filterbank: zero bands");
  if (!(cfg.upper_hz() > cfg.fmin_hz)) throw Error("mel filterbank: empty frequency range");
  const std::size_t n_bins = cfg.frame_length / 2 + 1;
  const double lo = hz_to_mel(cfg.fmin_hz), hi = hz_to_mel(cfg.upper_hz());
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t k = 0; k < edges.size(); ++k)
    edges[k] = mel_to_hz(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(cfg.n_mels + 1));
  std::vector<std::vector<double>> fb(cfg.n_mels, std::vector<double>(n_bins, 0.0));
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.frame_length);
      double w = 0.0;
      if (f > left && f <= center) w = (f - left) / (center - left);
      else if (f > center && f < right) w = (right - f) / (right - center);
      fb[m][k] = w;
    }
  }
  return fb;
}

namespace {

struct FftPlan {
  std::size_t n;
  double* in;
  fftw_complex* out;
  fftw_plan plan;

  explicit FftPlan(std::size_t size) : n(size) {
    in = fftw_alloc_real(n);
    out = fftw_alloc_complex(n / 2 + 1);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  ~FftPlan() {
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;
};

}  // namespace

std::vector<double> magnitude_stft(std::span<const double> samples, const MelConfig& cfg) {
  if (samples.empty()) throw Error("stft: empty audio");
  if (!(cfg.sample_rate > 0.0)) throw Error("stft: sample rate must be positive");
  if (cfg.frame_length < 2 || cfg.hop_length == 0) throw Error("stft: invalid frame/hop length");
  if (samples.size() < cfg.frame_length)
    throw Error("stft: audio shorter than one frame (" + std::to_string(cfg.frame_length) + " samples)");
  const std::size_t n = cfg.frame_length, n_bins = n / 2 + 1;
  const std::size_t n_frames = 1 + (samples.size() - n) / cfg.hop_length;
  std::vector<double> window(n);
  for (std::size_t i = 0; i < n; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));

  FftPlan fft(n);
  std::vector<double> mag(n_frames * n_bins);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const double* src = samples.data() + f * cfg.hop_length;
    for (std::size_t i = 0; i < n; ++i) fft.in[i] = src[i] * window[i];
    fftw_execute(fft.plan);
    for (std::size_t k = 0; k < n_bins; ++k) mag[f * n_bins + k] = std::hypot(fft.out[k][0], fft.out[k][1]);
  }
  return mag;
}

MelSpectrogram mel_spectrogram(std::span<const double> samples, const MelConfig& cfg, const std::string& track_id) {
  const auto mag = magnitude_stft(samples, cfg);
  const auto fb = mel_filterbank(cfg);
  const std::size_t n_bins = cfg.frame_length / 2 + 1;
  const std::size_t n_frames = mag.size() / n_bins;
  MelSpectrogram spec;
  spec.track_id = track_id;
  spec.frame_rate_hz = cfg.frame_rate();
  spec.n_mels = cfg.n_mels;
  spec.frames.resize(n_frames * cfg.n_mels);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const double* row = mag.data() + f * n_bins;
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < n_bins; ++k) e += fb[m][k] * row[k];
      spec.frames[f * cfg.n_mels + m] = cfg.log_compress ? std::log1p(e) : e;
    }
  }
  return spec;
}

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) s += static_cast<char>((v >> (8 * k)) & 255);
}

void put_u16(std::string& s, std::uint16_t v) {
  s += static_cast<char>(v & 255);
  s += static_cast<char>((v >> 8) & 255);
}

}  // namespace

WavAudio read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open WAV file " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw ParseError(path + ": not a RIFF/WAVE file");
  WavAudio wav;
  std::uint16_t format = 0, bits = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = read_u32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw ParseError(path + ": truncated chunk");
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (size < 16) throw ParseError(path + ": short fmt chunk");
      format = read_u16(p + body);
      wav.channels = read_u16(p + body + 2);
      wav.sample_rate = read_u32(p + body + 4);
      bits = read_u16(p + body + 14);
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      if (!have_fmt) throw ParseError(path + ": data chunk before fmt chunk");
      if (format != 1 || bits != 16) throw ParseError(path + ": only 16-bit PCM WAV is supported");
      if (wav.channels == 0) throw ParseError(path + ": zero channels");
      const std::size_t frames = size / (2 * wav.channels);
      wav.samples.resize(frames);
      for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (std::size_t c = 0; c < wav.channels; ++c)
          acc += static_cast<std::int16_t>(read_u16(p + body + 2 * (f * wav.channels + c))) / 32768.0;
        wav.samples[f] = acc / static_cast<double>(wav.channels);
      }
      return wav;
    }
    pos = body + size + (size & 1);
  }
  throw ParseError(path + ": no data chunk");
}

void write_wav(const std::string& path, std::span<const double> samples, double sample_rate) {
  std::string s = "RIFF";
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  put_u32(s, 36 + data_bytes);
  s += "WAVEfmt ";
  put_u32(s, 16);
  put_u16(s, 1);
  put_u16(s, 1);
  put_u32(s, static_cast<std::uint32_t>(sample_rate));
  put_u32(s, static_cast<std::uint32_t>(sample_rate) * 2);
  put_u16(s, 2);
  put_u16(s, 16);
  s += "data";
  put_u32(s, data_bytes);
  for (double x : samples) {
    const auto v = static_cast<std::int16_t>(std::lround(std::clamp(x, -1.0, 32767.0 / 32768.0) * 32768.0));
    put_u16(s, static_cast<std::uint16_t>(v));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write WAV file " + path);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

namespace {

constexpr char kSpecMagic[8] = {'S', 'K', 'S', 'P', 'E', 'C', '0', '1'};

}  // namespace

void write_spectrogram(std::ostream& out, const MelSpectrogram& spec) {
  std::string s(kSpecMagic, 8);
  put_u32(s, static_cast<std::uint32_t>(spec.track_id.size()));
  s += spec.track_id;
  char rate[8];
  std::memcpy(rate, &spec.frame_rate_hz, 8);
  s.append(rate, 8);
  put_u32(s, static_cast<std::uint32_t>(spec.n_mels));
  put_u32(s, static_cast<std::uint32_t>(spec.n_frames()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
  std::vector<float> values(spec.frames.begin(), spec.frames.end());
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
}

MelSpectrogram read_spectrogram(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kSpecMagic, 8) != 0) throw ParseError("not a spectrogram cache file");
  unsigned char u[4];
  auto u32 = [&] {
    if (!in.read(reinterpret_cast<char*>(u), 4)) throw ParseError("spectrogram cache: truncated header");
    return read_u32(u);
  };
  MelSpectrogram spec;
  spec.track_id.resize(u32());
  if (!in.read(spec.track_id.data(), static_cast<std::streamsize>(spec.track_id.size())))
    throw ParseError("spectrogram cache: truncated track id");
  if (!in.read(reinterpret_cast<char*>(&spec.frame_rate_hz), 8)) throw ParseError("spectrogram cache: truncated header");
  spec.n_mels = u32();
  const std::size_t n_frames = u32();
  std::vector<float> values(n_frames * spec.n_mels);
  if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float))))
    throw ParseError("spectrogram cache: truncated matrix");
  spec.frames.assign(values.begin(), values.end());
  spec.validate();
  return spec;
}

void write_spectrogram(const std::string& path, const MelSpectrogram& spec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write spectrogram file " + path);
  write_spectrogram(out, spec);
}

MelSpectrogram read_spectrogram(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open spectrogram file " + path);
  return read_spectrogram(in);
}

void SmearConfig::validate() const {
  if (!(sigma_s > 0.0)) throw Error("smearing: sigma must be positive");
  if (positive_radius_s < 0.0 || negative_margin_s < positive_radius_s)
    throw Error("smearing: need 0 <= positive radius <= negative margin");
}

namespace {

double nearest_distance(double t, std::span<const double> points) {
  double d = std::numeric_limits<double>::infinity();
  for (double p : points) d = std::min(d, std::abs(t - p));
  return d;
}

}  // namespace

std::vector<SmearedTarget> smear_targets(std::span<const double> boundaries, std::span<const double> frame_times,
                                         const SmearConfig& cfg) {
  cfg.validate();
  std::vector<SmearedTarget> out;
  for (std::size_t f = 0; f < frame_times.size(); ++f) {
    const double d = nearest_distance(frame_times[f], boundaries);
    if (d <= cfg.positive_radius_s)
      out.push_back({f, frame_times[f], std::exp(-d * d / (2.0 * cfg.sigma_s * cfg.sigma_s)), d});
    else if (d >= cfg.negative_margin_s)
      out.push_back({f, frame_times[f], 0.0, d});
  }
  return out;
}

std::vector<SmearedTarget> smear_targets(const WeakLabelSet& labels, std::span<const double> frame_times,
                                         const SmearConfig& cfg) {
  cfg.validate();
  std::vector<SmearedTarget> out;
  for (std::size_t f = 0; f < frame_times.size(); ++f) {
    const double t = frame_times[f];
    const double d = nearest_distance(t, labels.positive_times);
    if (d <= cfg.positive_radius_s) {
      out.push_back({f, t, std::exp(-d * d / (2.0 * cfg.sigma_s * cfg.sigma_s)), d});
    } else if (d >= cfg.negative_margin_s &&
               nearest_distance(t, labels.negative_times) <= cfg.weak_negative_radius_s) {
      out.push_back({f, t, 0.0, d});
    }
  }
  return out;
}

nn::Model build_audio_model(const AudioArch& a) {
  using nn::LayerSpec;
  std::vector<LayerSpec> layers{LayerSpec::conv2d(a.conv1_filters, a.conv1_h, a.conv1_w),
                                LayerSpec::relu(),
                                LayerSpec::max_pool(a.pool1_h, a.pool1_w),
                                LayerSpec::conv2d(a.conv2_filters, a.conv2_h, a.conv2_w),
                                LayerSpec::relu(),
                                LayerSpec::max_pool(a.pool2_h, a.pool2_w),
                                LayerSpec::dense(a.dense_units),
                                LayerSpec::relu(),
                                LayerSpec::dense(1),
                                LayerSpec::sigmoid()};
  validate_audio_architecture(layers);
  return nn::Model({1, a.context_frames, a.n_mels}, std::move(layers), "audio-nn");
}

void validate_audio_architecture(const std::vector<nn::LayerSpec>& layers) {
  using nn::LayerKind;
  if (layers.empty() || layers.back().kind != LayerKind::kSigmoid)
    throw Error("audio architecture: output must be a sigmoid");
  std::vector<nn::LayerSpec> core;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i)
    if (layers[i].kind != LayerKind::kRelu && layers[i].kind != LayerKind::kTanh) core.push_back(layers[i]);
  const std::vector<LayerKind> expected{LayerKind::kConv2D, LayerKind::kMaxPool2D, LayerKind::kConv2D,
                                        LayerKind::kMaxPool2D, LayerKind::kDense, LayerKind::kDense};
  bool ok = core.size() == expected.size();
  for (std::size_t i = 0; ok && i < core.size(); ++i) ok = core[i].kind == expected[i];
  if (!ok) throw Error("audio architecture: expected conv, pool, conv, pool, dense, dense(1)");
  if (core.back().units != 1) throw Error("audio architecture: final dense layer must project to a scalar");
}

bool extract_patch(const MelSpectrogram& spec, std::size_t center, std::size_t context, std::span<double> out) {
  const std::size_t n = spec.n_frames();
  if (out.size() != context * spec.n_mels) throw Error("patch: output size mismatch");
  const auto first = static_cast<std::ptrdiff_t>(center) - static_cast<std::ptrdiff_t>(context / 2);
  bool padded = false;
  for (std::size_t r = 0; r < context; ++r) {
    auto src = first + static_cast<std::ptrdiff_t>(r);
    if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) {
      padded = true;
      src = std::clamp<std::ptrdiff_t>(src, 0, static_cast<std::ptrdiff_t>(n) - 1);
    }
    std::copy_n(spec.frames.begin() + src * static_cast<std::ptrdiff_t>(spec.n_mels), spec.n_mels,
                out.begin() + static_cast<std::ptrdiff_t>(r * spec.n_mels));
  }
  return padded;
}

nn::Dataset make_audio_dataset(const std::vector<AudioTrainingTrack>& tracks, std::size_t context_frames,
                               const AudioSampling& sampling) {
  if (tracks.empty()) throw Error("audio dataset: no tracks");
  const std::size_t n_mels = tracks.front().spec->n_mels;
  struct Row {
    std::size_t track, frame;
    double target;
  };
  std::vector<Row> pos, neg;
  std::size_t pos_seen = 0;
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    if (tracks[t].spec->n_mels != n_mels) throw Error("audio dataset: tracks differ in band count");
    for (const auto& s : tracks[t].targets) {
      if (s.target > 0.0) {
        if (pos_seen++ % std::max<std::size_t>(sampling.positive_stride, 1) == 0) pos.push_back({t, s.frame, s.target});
      } else {
        neg.push_back({t, s.frame, 0.0});
      }
    }
  }
  if (sampling.negative_ratio > 0.0) {
    const auto keep = std::min(neg.size(), static_cast<std::size_t>(std::ceil(sampling.negative_ratio * static_cast<double>(pos.size()))));
    Rng rng = Rng::substream(sampling.seed, 0x617564);
    rng.shuffle(std::span<Row>(neg));
    neg.resize(keep);
  }
  auto rows = std::make_shared<std::vector<Row>>(pos);
  rows->insert(rows->end(), neg.begin(), neg.end());
  std::vector<double> targets;
  targets.reserve(rows->size());
  for (const auto& r : *rows) targets.push_back(r.target);
  auto specs = std::make_shared<std::vector<std::shared_ptr<const MelSpectrogram>>>();
  for (const auto& t : tracks) specs->push_back(t.spec);
  return nn::Dataset({1, context_frames, n_mels}, rows->size(),
                     [rows, specs, context_frames](std::size_t i, std::span<double> out) {
                       const Row& r = (*rows)[i];
                       extract_patch(*(*specs)[r.track], r.frame, context_frames, out);
                     },
                     std::move(targets));
}

nn::Model train_audio_model(const nn::Dataset& data, const nn::TrainConfig& cfg, const AudioArch& arch) {
  bool has_pos = false, has_neg = false;
  for (double t : data.targets()) {
    has_pos |= t > 0.5;
    has_neg |= t == 0.0;
  }
  if (!has_pos || !has_neg) throw Error("audio model: training data must contain both boundary and non-boundary samples");
  nn::Model model = build_audio_model(arch);
  if (data.sample_shape() != model.input_shape())
    throw Error("audio model: sample shape " + nn::shape_string(data.sample_shape()) + " does not match architecture " +
                nn::shape_string(model.input_shape()));
  model.init_weights(cfg.seed);
  return nn::train(std::move(model), data, cfg);
}

LikelihoodCurve predict_audio_likelihood(const nn::Model& model, const MelSpectrogram& spec, std::size_t hop_frames,
                                         unsigned threads) {
  if (hop_frames == 0) throw Error("audio likelihood: hop must be positive");
  const auto& shape = model.input_shape();
  if (shape.size() != 3 || shape[2] != spec.n_mels)
    throw Error("audio likelihood: model input " + nn::shape_string(shape) + " does not match " +
                std::to_string(spec.n_mels) + " Mel bands");
  const std::size_t context = shape[1];
  if (spec.n_frames() <= context)
    throw Error("audio likelihood: spectrogram '" + spec.track_id + "' is not longer than the context window");
  LikelihoodCurve curve;
  curve.source = model.name().empty() ? "audio-nn" : model.name();
  std::vector<std::size_t> centers;
  for (std::size_t c = 0; c < spec.n_frames(); c += hop_frames) centers.push_back(c);
  constexpr std::size_t kChunk = 256;
  for (std::size_t b = 0; b < centers.size(); b += kChunk) {
    const std::size_t e = std::min(centers.size(), b + kChunk);
    nn::Tensor batch({e - b, 1, context, spec.n_mels});
    for (std::size_t i = b; i < e; ++i) extract_patch(spec, centers[i], context, batch.row(i - b));
    const auto out = model.forward(batch, threads);
    curve.values.insert(curve.values.end(), out.data.begin(), out.data.end());
  }
  for (std::size_t c : centers) curve.times_s.push_back(spec.frame_time(c));
  return curve;
}

nn::Model finetune_last_layer(const nn::Model& model, const nn::Dataset& data, const nn::TrainConfig& cfg) {
  const auto [begin, end] = model.param_range(model.last_dense_layer());
  return nn::train(model, data, cfg, nn::TrainableRange{begin, end});
}

}  // namespace skipseg
