#pragma once

#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "skipseg/common.hpp"
#include "skipseg/neural.hpp"
#include "skipseg/skip_boundary.hpp"

namespace skipseg {

/// Log-compressed Mel-band magnitudes, one row per frame.
struct MelSpectrogram {
  std::string track_id;
  double frame_rate_hz = 0.0;
  std::size_t n_mels = 0;
  std::vector<double> frames;  // row-major, n_frames x n_mels

  std::size_t n_frames() const { return n_mels ? frames.size() / n_mels : 0; }
  double frame_time(std::size_t i) const { return static_cast<double>(i) / frame_rate_hz; }
  double at(std::size_t frame, std::size_t band) const { return frames[frame * n_mels + band]; }
  std::vector<double> frame_times() const;
  void validate() const;
};

struct MelConfig {
  double sample_rate = 16000.0;
  std::size_t frame_length = 1024;
  std::size_t hop_length = 512;
  std::size_t n_mels = 64;
  double fmin_hz = 0.0;
  double fmax_hz = 0.0;  // 0 means Nyquist
  bool log_compress = true;

  double frame_rate() const { return sample_rate / static_cast<double>(hop_length); }
  double upper_hz() const { return fmax_hz > 0.0 ? fmax_hz : 0.5 * sample_rate; }
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Centre frequency of each triangular band.
std::vector<double> mel_band_centers(const MelConfig& cfg);

/// Triangular filters with unit peak, n_mels x (frame_length/2 + 1).
std::vector<std::vector<double>> mel_filterbank(const MelConfig& cfg);

/// Hann-windowed magnitude STFT -> Mel filterbank -> log(1 + x).
MelSpectrogram mel_spectrogram(std::span<const double> samples, const MelConfig& cfg, const std::string& track_id = {});

/// Magnitude STFT frames (n_frames x (frame_length/2 + 1)), row-major.
std::vector<double> magnitude_stft(std::span<const double> samples, const MelConfig& cfg);

struct WavAudio {
  double sample_rate = 0.0;
  std::size_t channels = 0;
  std::vector<double> samples;  // mono mixdown in [-1, 1)
};

/// Uncompressed 16-bit little-endian PCM RIFF/WAVE only.
WavAudio read_wav(const std::string& path);
void write_wav(const std::string& path, std::span<const double> samples, double sample_rate);

/// Spectrogram cache: magic, track id, frame rate, band count, frame count,
/// then row-major float32 values.
void write_spectrogram(std::ostream& out, const MelSpectrogram& spec);
MelSpectrogram read_spectrogram(std::istream& in);
void write_spectrogram(const std::string& path, const MelSpectrogram& spec);
MelSpectrogram read_spectrogram(const std::string& path);

struct SmearConfig {
  double sigma_s = 1.5;
  double positive_radius_s = 3.0;
  double negative_margin_s = 6.0;
  /// Weak negatives: a frame must lie this close to a weak negative time.
  double weak_negative_radius_s = 0.25;

  void validate() const;
};

struct SmearedTarget {
  std::size_t frame = 0;
  double center_time_s = 0.0;
  double target = 0.0;
  double nearest_boundary_distance_s = 0.0;
};

/// Frames within the positive radius of a boundary get exp(-d^2 / 2 sigma^2);
/// frames at least the negative margin away from every boundary get 0;
/// frames in between are dropped.
std::vector<SmearedTarget> smear_targets(std::span<const double> boundaries, std::span<const double> frame_times,
                                         const SmearConfig& cfg = {});

/// Same rule with weak labels: positives only near weak positives, negatives
/// only near weak negatives and away from every weak positive.
std::vector<SmearedTarget> smear_targets(const WeakLabelSet& labels, std::span<const double> frame_times,
                                         const SmearConfig& cfg = {});

/// Convolutional boundary classifier: conv -> pool -> conv -> pool -> dense -> scalar.
struct AudioArch {
  std::size_t context_frames = 500;  // 16 s at 31.25 frames/s
  std::size_t n_mels = 64;
  std::size_t conv1_filters = 8, conv1_h = 6, conv1_w = 8;
  std::size_t pool1_h = 3, pool1_w = 3;
  std::size_t conv2_filters = 16, conv2_h = 6, conv2_w = 6;
  std::size_t pool2_h = 3, pool2_w = 3;
  std::size_t dense_units = 128;
};

nn::Model build_audio_model(const AudioArch& arch);

/// Throws unless the layers read conv, pool, conv, pool, dense, dense(1)
/// (activations aside) with a sigmoid head.
void validate_audio_architecture(const std::vector<nn::LayerSpec>& layers);

/// Copies `context` frames centred on `center` into out (context x n_mels),
/// replicating edge frames. Returns true when padding was needed.
bool extract_patch(const MelSpectrogram& spec, std::size_t center, std::size_t context, std::span<double> out);

struct AudioTrainingTrack {
  std::shared_ptr<const MelSpectrogram> spec;
  std::vector<SmearedTarget> targets;
};

struct AudioSampling {
  std::size_t positive_stride = 1;  // keep every k-th positive frame
  double negative_ratio = 1.0;      // negatives kept per positive; <= 0 keeps all
  std::uint64_t seed = 1;
};

/// Patches are cut lazily from the shared spectrograms.
nn::Dataset make_audio_dataset(const std::vector<AudioTrainingTrack>& tracks, std::size_t context_frames,
                               const AudioSampling& sampling = {});

nn::Model train_audio_model(const nn::Dataset& data, const nn::TrainConfig& cfg, const AudioArch& arch);

/// One value per hop across the whole spectrogram.
LikelihoodCurve predict_audio_likelihood(const nn::Model& model, const MelSpectrogram& spec, std::size_t hop_frames = 1,
                                         unsigned threads = 1);

/// Retrains only the final dense layer; all other weights stay bit-identical.
nn::Model finetune_last_layer(const nn::Model& model, const nn::Dataset& data, const nn::TrainConfig& cfg);

}  // namespace skipseg
