#ifndef SDTTS_DISTILL_HPP
#define SDTTS_DISTILL_HPP

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "sdtts/data.hpp"
#include "sdtts/model.hpp"
#include "sdtts/rng.hpp"

namespace sdtts {

// One synthetic parallel: the teacher re-renders utterance content_id in the
// voice of prompt_id (a different speaker) with the ground-truth durations
// forced, so the synthetic mel aligns frame-for-frame with the original.
struct PairRecord {
  std::string content_id;
  std::string prompt_id;
  std::string mel_path;  // relative to pair-set root
  Mel synth;
};

struct PairSet {
  std::string root;
  std::vector<PairRecord> pairs;
  std::map<std::string, int> by_content;  // content_id -> index

  void rebuild_index() {
    by_content.clear();
    for (size_t i = 0; i < pairs.size(); ++i) by_content[pairs[i].content_id] = static_cast<int>(i);
  }
};

void save_pairs(const std::string& dir, const PairSet& set);
PairSet load_pairs(const std::string& dir);

// Every corpus utterance must have a pair whose synthetic mel matches its
// frame count exactly and whose prompt comes from a different speaker.
// Throws std::runtime_error naming the first violation.
void validate_pairs(const PairSet& set, const Corpus& corpus);

// Indices of content-branch inputs to replace for one batch: exactly
// floor(sigma * B) of them, chosen without replacement. Consumes no draws
// when the count is zero.
inline std::vector<int> choose_mix_indices(Rng& rng, int batch_size, double sigma) {
  if (sigma < 0.0 || sigma > 1.0) throw std::invalid_argument("mixing: sigma must lie in [0, 1]");
  int k = static_cast<int>(std::floor(sigma * batch_size));
  if (k <= 0) return {};
  return rng.choose_without_replacement(batch_size, k);
}

// Stage two data pass: the trained teacher renders each utterance's content
// with a prompt drawn (seeded) from a different speaker, durations forced to
// the ground truth and the latent pinned to the prior mean so the pass is
// deterministic.
template <typename T>
PairSet generate_pairs(nn::TtsModel<T>& teacher, const Corpus& corpus, uint64_t seed) {
  if (corpus.by_speaker.size() < 2)
    throw std::runtime_error("pair generation needs at least two speakers");
  std::vector<std::string> speakers;
  for (const auto& [name, idx] : corpus.by_speaker) speakers.push_back(name);

  PairSet set;
  Rng rng(mix_seed(seed, 0x9A125ull));
  for (const Utterance& u : corpus.utts) {
    // Uniform over the other speakers, then uniform over that speaker's
    // utterances.
    int skip = static_cast<int>(rng.below(static_cast<int64_t>(speakers.size()) - 1));
    std::string chosen;
    for (const std::string& s : speakers) {
      if (s == u.speaker) continue;
      if (skip == 0) {
        chosen = s;
        break;
      }
      --skip;
    }
    const auto& pool = corpus.by_speaker.at(chosen);
    const Utterance& prompt = corpus.utts[static_cast<size_t>(pool[static_cast<size_t>(
        rng.below(static_cast<int64_t>(pool.size())))])];

    nn::SynthOptions<T> opt;
    opt.forced_durations = u.durations;
    opt.noise_scale = 0.0;  // prior mean
    auto res = teacher.synthesize(u.phonemes, prompt.mel, opt);
    if (res.mel.num_frames() != u.total_frames())
      throw std::runtime_error("pair generation: frame mismatch for '" + u.id + "'");
    PairRecord rec;
    rec.content_id = u.id;
    rec.prompt_id = prompt.id;
    rec.mel_path = "mels/" + u.id + ".pair.mel";
    rec.synth = std::move(res.mel);
    set.pairs.push_back(std::move(rec));
  }
  set.rebuild_index();
  return set;
}

}  // namespace sdtts

#endif
