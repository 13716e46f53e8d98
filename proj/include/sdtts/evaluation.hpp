#ifndef SDTTS_EVALUATION_HPP
#define SDTTS_EVALUATION_HPP

#include <functional>
#include <string>
#include <vector>

#include "sdtts/config.hpp"
#include "sdtts/data.hpp"
#include "sdtts/distill.hpp"
#include "sdtts/model.hpp"
#include "sdtts/trainer.hpp"

namespace sdtts {

double cosine_sim(const std::vector<float>& a, const std::vector<float>& b);

// Unit-cost edit distance (insert / delete / substitute).
int levenshtein(const std::vector<int>& hyp, const std::vector<int>& ref);

// levenshtein / |ref|; the reference must be non-empty. Can exceed 1.
double cer(const std::vector<int>& hyp, const std::vector<int>& ref);

using Embedder = std::function<std::vector<float>(const Mel&)>;
using Transcriber = std::function<std::vector<int>(const Mel&)>;

// "stat": fixed seeded projection of per-bin mean/std statistics.
Embedder make_stat_embedder(uint64_t seed, int mel_bins, int dim);
Embedder get_embedder(const std::string& name, const RunConfig& cfg);

// "synthetic": temporal-mean removal, per-frame correlation against the
// shared phoneme pattern bank, argmax, collapse runs.
Transcriber make_pattern_transcriber(uint64_t content_seed, int vocab_size, int mel_bins);
Transcriber get_transcriber(const std::string& name, const RunConfig& cfg);

double eval_sim(const std::vector<Mel>& synths, const std::vector<Mel>& prompts, const Embedder& embed);
double eval_cer(const std::vector<Mel>& synths, const std::vector<std::vector<int>>& refs,
                const Transcriber& transcribe);

struct RtfResult {
  double rtf = 0;  // median wall seconds per second of audio
  double median_wall_s = 0;
  double audio_s = 0;
  int frames = 0;
};

// synth_once returns the number of frames it produced. Warmup runs are
// excluded; the median over the timed repeats is reported.
RtfResult measure_rtf(const std::function<int()>& synth_once, int hop, int sample_rate, int warmup,
                      int repeats);

struct EmbeddingRow {
  std::string label;      // speaker name
  bool synthetic = false;
  std::vector<float> vec;
};

// Text table: "<label> <real|synth> <v0> <v1> ...", one row per line.
void export_embeddings(const std::string& path, const std::vector<EmbeddingRow>& rows);
std::vector<EmbeddingRow> load_embeddings(const std::string& path);

// Mean distance between per-speaker centroids of real rows and synthetic
// rows with the same label; labels present on only one side are an error.
double real_synth_centroid_distance(const std::vector<EmbeddingRow>& rows);

// ---- zero-shot protocol over a held-out corpus ----

struct ZeroShotReport {
  double sim = 0;
  double cer = 0;
  std::vector<EmbeddingRow> embeddings;  // prompt rows (real) + synth rows
};

// Prompts are the held-out utterances; the text synthesized against prompt i
// is the phoneme sequence of utterance i+1 (wrapping), so text and prompt
// speaker are decoupled exactly as in zero-shot use.
template <typename T>
ZeroShotReport evaluate_zero_shot(nn::TtsModel<T>& model, const Corpus& eval_corpus,
                                  const Embedder& embed, const Transcriber& transcribe,
                                  uint64_t seed) {
  ZeroShotReport rep;
  Rng rng(mix_seed(seed, 0xE7A1ull));
  std::vector<Mel> synths, prompts;
  std::vector<std::vector<int>> refs;
  int n = static_cast<int>(eval_corpus.utts.size());
  for (int i = 0; i < n; ++i) {
    const Utterance& prompt = eval_corpus.utts[static_cast<size_t>(i)];
    const Utterance& text = eval_corpus.utts[static_cast<size_t>((i + 1) % n)];
    nn::SynthOptions<T> opt;
    opt.rng = &rng;
    auto res = model.synthesize(text.phonemes, prompt.mel, opt);
    refs.push_back(text.phonemes);
    prompts.push_back(prompt.mel);
    rep.embeddings.push_back({prompt.speaker, false, embed(prompt.mel)});
    rep.embeddings.push_back({prompt.speaker, true, embed(res.mel)});
    synths.push_back(std::move(res.mel));
  }
  rep.sim = eval_sim(synths, prompts, embed);
  rep.cer = eval_cer(synths, refs, transcribe);
  return rep;
}

struct SigmaSweepRow {
  double sigma = 0;
  double sim = 0;
  double cer = 0;
  double centroid_dist = 0;
};

// Train one student per sigma from the same initialization and score each on
// the held-out corpus. The teacher is represented by its generated pair set.
template <typename T>
std::vector<SigmaSweepRow> sigma_sweep(const RunConfig& base_cfg, const Corpus& train_corpus,
                                       const PairSet& pairs, const Corpus& eval_corpus,
                                       const std::vector<double>& sigmas, int steps) {
  Embedder embed = get_embedder("stat", base_cfg);
  Transcriber transcribe = get_transcriber("synthetic", base_cfg);
  std::vector<SigmaSweepRow> rows;
  for (double s : sigmas) {
    RunConfig cfg = base_cfg;
    cfg.sigma = s;
    nn::TtsModel<T> student(cfg);
    nn::Trainer<T> trainer(student, train_corpus, &pairs);
    for (int i = 0; i < steps; ++i) trainer.step();
    auto rep = evaluate_zero_shot(student, eval_corpus, embed, transcribe, cfg.train_seed);
    rows.push_back({s, rep.sim, rep.cer, real_synth_centroid_distance(rep.embeddings)});
  }
  return rows;
}

}  // namespace sdtts

#endif
