#ifndef SDTTS_DATA_HPP
#define SDTTS_DATA_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sdtts/tensor.hpp"

namespace sdtts {

// Mel spectrogram: frames is (T, mel_bins), row per frame.
struct Mel {
  nn::Tensor<float> frames;
  int hop = 256;
  int sample_rate = 22050;

  int num_frames() const { return frames.rank() == 2 ? frames.rows() : 0; }
  int num_bins() const { return frames.rank() == 2 ? frames.cols() : 0; }
};

struct Utterance {
  std::string id;
  std::string speaker;
  std::string text;
  std::vector<int> phonemes;    // symbol ids
  std::vector<int> durations;   // frames per phoneme, each >= 1
  std::vector<float> pitch;     // phoneme-level
  std::vector<float> energy;    // phoneme-level
  std::string mel_path;         // relative to corpus root
  Mel mel;

  int total_frames() const {
    int t = 0;
    for (int d : durations) t += d;
    return t;
  }
};

struct Corpus {
  std::string root;
  int mel_bins = 0;
  int hop = 256;
  int sample_rate = 22050;
  int vocab_size = 0;
  std::vector<Utterance> utts;
  std::map<std::string, std::vector<int>> by_speaker;  // speaker -> utterance indices

  void rebuild_speaker_index();
  // Throws std::runtime_error naming the offending utterance on any
  // inconsistency (duration/frame mismatch, bad sizes, out-of-range ids).
  void validate() const;
};

void save_mel(const std::string& path, const Mel& mel);
Mel load_mel(const std::string& path);

// Corpus on disk: <dir>/manifest.txt, per-utterance records under records/,
// mel sidecars under mels/.
void save_corpus(const std::string& dir, const Corpus& corpus);
Corpus load_corpus(const std::string& dir);

struct SynthSpec {
  int n_speakers = 4;
  int utts_per_speaker = 8;
  int mel_bins = 16;
  int vocab_size = 12;
  int min_phonemes = 4;
  int max_phonemes = 10;
  int min_duration = 2;
  int max_duration = 6;
  int hop = 256;
  int sample_rate = 22050;
  uint64_t seed = 1;           // speakers + utterance draws
  uint64_t content_seed = 77;  // phoneme pattern bank, shared across corpora
};

// Deterministic bank of per-phoneme spectral patterns: vocab_size rows, each
// zero-mean and unit-norm over mel_bins. Corpora built with the same
// content_seed share the bank, so a transcriber fitted to it transfers.
std::vector<std::vector<float>> phoneme_patterns(uint64_t content_seed, int vocab_size, int mel_bins);

// Fully synthetic multi-speaker corpus: per-speaker spectral offset plus
// energy-scaled phoneme patterns plus a pitch-driven band, with light noise.
// Annotations (durations, pitch, energy) are consistent with the rendered
// mel by construction.
Corpus make_synthetic_corpus(const SynthSpec& spec);

}  // namespace sdtts

#endif
