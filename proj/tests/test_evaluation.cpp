#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <thread>
#include <vector>

#include "doctest.h"
#include "sdtts/evaluation.hpp"
#include "support/testconfig.hpp"

using namespace sdtts;
using sdtts::testing::spec_from_config;
using sdtts::testing::tiny_config;

namespace {

// Memoized-recursion edit distance: an independent implementation path from
// the two-row iterative loop in the library.
int lev_memo(const std::vector<int>& a, const std::vector<int>& b) {
  size_t n = a.size(), m = b.size();
  std::vector<int> memo((n + 1) * (m + 1), -1);
  std::function<int(size_t, size_t)> rec = [&](size_t i, size_t j) -> int {
    if (i == 0) return static_cast<int>(j);
    if (j == 0) return static_cast<int>(i);
    int& slot = memo[i * (m + 1) + j];
    if (slot >= 0) return slot;
    int best = rec(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1);
    best = std::min(best, rec(i - 1, j) + 1);
    best = std::min(best, rec(i, j - 1) + 1);
    return slot = best;
  };
  return rec(n, m);
}

// Breadth-first search over actual edit scripts: distance is the first level
// at which the target string appears. Exponential, so only for short inputs.
int lev_bfs(const std::vector<int>& a, const std::vector<int>& b, int alphabet) {
  if (a == b) return 0;
  std::set<std::vector<int>> seen{a};
  std::set<std::vector<int>> frontier{a};
  for (int dist = 1; dist <= 16; ++dist) {
    std::set<std::vector<int>> next;
    for (const auto& s : frontier) {
      auto offer = [&](std::vector<int> t) {
        if (t == b) return true;
        if (seen.insert(t).second) next.insert(std::move(t));
        return false;
      };
      for (size_t i = 0; i < s.size(); ++i) {  // deletions
        auto t = s;
        t.erase(t.begin() + static_cast<long>(i));
        if (offer(std::move(t))) return dist;
      }
      for (size_t i = 0; i < s.size(); ++i)  // substitutions
        for (int c = 0; c < alphabet; ++c) {
          if (s[i] == c) continue;
          auto t = s;
          t[i] = c;
          if (offer(std::move(t))) return dist;
        }
      for (size_t i = 0; i <= s.size(); ++i)  // insertions
        for (int c = 0; c < alphabet; ++c) {
          auto t = s;
          t.insert(t.begin() + static_cast<long>(i), c);
          if (offer(std::move(t))) return dist;
        }
    }
    frontier = std::move(next);
  }
  throw std::logic_error("lev_bfs: distance exceeded search bound");
}

std::string temp_path(const char* tag) {
  return (std::filesystem::temp_directory_path() / (std::string("sdtts_eval_") + tag)).string();
}

}  // namespace

TEST_CASE("cosine similarity hand cases") {
  CHECK(cosine_sim({1, 0}, {1, 0}) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(cosine_sim({1, 0}, {-2, 0}) == doctest::Approx(-1.0).epsilon(1e-8));
  CHECK(cosine_sim({1, 0}, {0, 3}) == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(cosine_sim({1, 2, 2}, {2, 4, 4}) == doctest::Approx(1.0).epsilon(1e-8));
  // Scale invariance.
  CHECK(cosine_sim({0.1f, 0.2f}, {10, 5}) ==
        doctest::Approx(cosine_sim({1, 2}, {2, 1})).epsilon(1e-8));
  CHECK(cosine_sim({3, 4}, {4, 3}) == doctest::Approx(24.0 / 25.0).epsilon(1e-8));

  CHECK_THROWS_AS(cosine_sim({1, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(cosine_sim({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(cosine_sim({0, 0}, {1, 2}), std::invalid_argument);
}

TEST_CASE("edit distance hand cases") {
  CHECK(levenshtein({}, {}) == 0);
  CHECK(levenshtein({1, 2, 3}, {}) == 3);
  CHECK(levenshtein({}, {4, 5}) == 2);
  CHECK(levenshtein({1, 2, 3}, {1, 2, 3}) == 0);
  // kitten -> sitting with symbols mapped to ints.
  std::vector<int> kitten{0, 1, 2, 2, 3, 4};
  std::vector<int> sitting{5, 1, 2, 2, 1, 4, 6};
  CHECK(levenshtein(kitten, sitting) == 3);
  CHECK(levenshtein({1, 2}, {2, 1}) == 2);
}

TEST_CASE("edit distance agrees with memoized recursion over all short strings") {
  // Every string of length <= 5 over a 3-symbol alphabet: 364 strings.
  std::vector<std::vector<int>> all{{}};
  for (int len = 1; len <= 5; ++len) {
    size_t start = 0;
    std::vector<std::vector<int>> grown;
    for (const auto& s : all)
      if (s.size() == static_cast<size_t>(len - 1))
        for (int c = 0; c < 3; ++c) {
          auto t = s;
          t.push_back(c);
          grown.push_back(std::move(t));
        }
    (void)start;
    for (auto& g : grown) all.push_back(std::move(g));
  }
  REQUIRE(all.size() == 364);

  long mismatches = 0;
  for (const auto& a : all)
    for (const auto& b : all)
      if (levenshtein(a, b) != lev_memo(a, b)) ++mismatches;
  CHECK(mismatches == 0);
}

TEST_CASE("edit distance agrees with breadth-first search over edit scripts") {
  Rng rng(52);
  for (int trial = 0; trial < 120; ++trial) {
    auto draw = [&] {
      std::vector<int> s(static_cast<size_t>(rng.below(5)));  // length 0..4
      for (auto& c : s) c = static_cast<int>(rng.below(3));
      return s;
    };
    auto a = draw(), b = draw();
    CHECK(levenshtein(a, b) == lev_bfs(a, b, 3));
  }
}

TEST_CASE("character error rate normalizes by the reference") {
  CHECK(cer({1, 2, 3}, {1, 3}) == doctest::Approx(0.5));
  CHECK(cer({}, {1, 2}) == doctest::Approx(1.0));
  CHECK(cer({1, 2, 3, 4}, {5}) == doctest::Approx(4.0));  // can exceed one
  CHECK_THROWS_AS(cer({1}, {}), std::invalid_argument);
}

TEST_CASE("stat embedder is deterministic, seed-sensitive, and order-blind") {
  const int F = 8, D = 5;
  auto embed = make_stat_embedder(99, F, D);

  Rng rng(53);
  Mel mel;
  mel.frames = nn::Tensor<float>({6, F});
  for (auto& v : mel.frames.data) v = static_cast<float>(rng.normal());

  auto e1 = embed(mel);
  auto e2 = embed(mel);
  REQUIRE(e1.size() == size_t(D));
  CHECK(e1 == e2);

  // Per-bin statistics ignore frame order entirely.
  Mel shuffled = mel;
  for (int f = 0; f < F; ++f) {
    std::swap(shuffled.frames(0, f), shuffled.frames(4, f));
    std::swap(shuffled.frames(2, f), shuffled.frames(5, f));
  }
  CHECK(embed(shuffled) == e1);

  // A constant spectral offset (a different voice) moves the embedding.
  Mel offset = mel;
  for (auto& v : offset.frames.data) v += 0.7f;
  CHECK(embed(offset) != e1);

  auto embed2 = make_stat_embedder(100, F, D);
  CHECK(embed2(mel) != e1);

  Mel wrong;
  wrong.frames = nn::Tensor<float>({6, F + 1});
  CHECK_THROWS_WITH_AS(embed(wrong), doctest::Contains("bins"), std::invalid_argument);
  CHECK_THROWS_AS(make_stat_embedder(1, 0, 4), std::invalid_argument);
}

TEST_CASE("pattern transcriber reads block-structured mels back out") {
  const int F = 16, V = 8;
  auto bank = phoneme_patterns(77, V, F);
  REQUIRE(bank.size() == size_t(V));

  // Two phonemes, four frames each, on a constant speaker offset.
  Mel mel;
  mel.frames = nn::Tensor<float>({8, F});
  for (int t = 0; t < 8; ++t) {
    int p = t < 4 ? 2 : 5;
    for (int f = 0; f < F; ++f)
      mel.frames(t, f) = 3.0f * bank[size_t(p)][size_t(f)] + 0.9f;
  }

  auto transcribe = make_pattern_transcriber(77, V, F);
  CHECK(transcribe(mel) == std::vector<int>{2, 5});

  Mel wrong;
  wrong.frames = nn::Tensor<float>({4, F + 2});
  CHECK_THROWS_AS(transcribe(wrong), std::invalid_argument);
}

TEST_CASE("pattern transcriber recovers ground-truth corpus content") {
  RunConfig cfg = tiny_config();
  SynthSpec spec = spec_from_config(cfg);
  spec.utts_per_speaker = 4;
  Corpus corpus = make_synthetic_corpus(spec);

  auto transcribe = make_pattern_transcriber(cfg.content_seed, cfg.corpus_vocab, cfg.mel_bins);
  std::vector<Mel> mels;
  std::vector<std::vector<int>> refs;
  for (const Utterance& u : corpus.utts) {
    mels.push_back(u.mel);
    refs.push_back(u.phonemes);
  }
  double gt_cer = eval_cer(mels, refs, transcribe);
  MESSAGE("ground-truth corpus CER: ", gt_cer);
  // The generator never emits adjacent repeats (runs would collapse), so on
  // clean corpus mels the transcriber should be essentially perfect.
  CHECK(gt_cer < 0.05);
}

TEST_CASE("aggregate metrics validate their inputs") {
  auto embed = make_stat_embedder(1, 4, 3);
  auto transcribe = make_pattern_transcriber(1, 4, 4);
  Mel m;
  m.frames = nn::Tensor<float>({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  CHECK_THROWS_AS(eval_sim({m}, {}, embed), std::invalid_argument);
  CHECK_THROWS_AS(eval_sim({}, {}, embed), std::invalid_argument);
  CHECK_THROWS_AS(eval_cer({m}, {{1}, {2}}, transcribe), std::invalid_argument);
}

TEST_CASE("real-time factor uses the median of timed repeats only") {
  int calls = 0;
  auto synth = [&]() {
    ++calls;
    // Warmup call is slow, one timed outlier is slower still; the median
    // must stay at the 50 ms plateau.
    int ms = 50;
    if (calls == 1) ms = 250;       // warmup, untimed
    else if (calls == 4) ms = 200;  // timed outlier
    else if (calls == 2) ms = 10;   // timed fast outlier
    std::this_thread::sleep_for(std::chrono::milliseconds(ms));
    return 86;
  };
  auto r = measure_rtf(synth, 256, 22050, /*warmup=*/1, /*repeats=*/5);
  CHECK(calls == 6);
  CHECK(r.frames == 86);
  CHECK(r.audio_s == doctest::Approx(86.0 * 256 / 22050).epsilon(1e-9));
  double expect = 0.050 / r.audio_s;
  CHECK(r.rtf > 0.90 * expect);
  CHECK(r.rtf < 1.10 * expect);
  CHECK(r.median_wall_s == doctest::Approx(0.050).epsilon(0.1));

  CHECK_THROWS_AS(measure_rtf(synth, 256, 22050, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(measure_rtf(synth, 0, 22050, 0, 1), std::invalid_argument);
  auto empty = [] { return 0; };
  CHECK_THROWS_AS(measure_rtf(empty, 256, 22050, 0, 1), std::runtime_error);
}

TEST_CASE("embedding tables round-trip through disk exactly") {
  std::vector<EmbeddingRow> rows{
      {"spk0", false, {1.0f, -2.5f, 3.25e-7f}},
      {"spk0", true, {0.1f, 2.0f, 3.0f}},
      {"spk1", false, {-1.5f, 0.0f, 9.0f}},
  };
  std::string path = temp_path("emb.txt");
  export_embeddings(path, rows);
  auto back = load_embeddings(path);
  REQUIRE(back.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].label == rows[i].label);
    CHECK(back[i].synthetic == rows[i].synthetic);
    CHECK(back[i].vec == rows[i].vec);  // %.9g preserves float exactly
  }
  std::filesystem::remove(path);

  std::vector<EmbeddingRow> bad{{"has space", false, {1.0f}}};
  CHECK_THROWS_AS(export_embeddings(temp_path("bad.txt"), bad), std::invalid_argument);
}

TEST_CASE("centroid distance matches a hand-built configuration") {
  // Label A: real centroid (1,0), synthetic centroid (1,2) -> distance 2.
  // Label B: real (0,0), synthetic (0,1) -> distance 1. Mean 1.5.
  std::vector<EmbeddingRow> rows{
      {"A", false, {0, 0}}, {"A", false, {2, 0}}, {"A", true, {1, 3}}, {"A", true, {1, 1}},
      {"B", false, {0, 0}}, {"B", true, {0, 1}},
  };
  CHECK(real_synth_centroid_distance(rows) == doctest::Approx(1.5).epsilon(1e-9));

  rows.push_back({"C", false, {0, 0}});  // no synthetic side
  CHECK_THROWS_AS(real_synth_centroid_distance(rows), std::invalid_argument);
  CHECK_THROWS_AS(real_synth_centroid_distance({}), std::invalid_argument);
}

TEST_CASE("zero-shot protocol produces paired embeddings and finite scores") {
  RunConfig cfg = tiny_config();
  Corpus corpus = make_synthetic_corpus(spec_from_config(cfg));
  nn::TtsModel<float> model(cfg);

  auto embed = get_embedder("stat", cfg);
  auto transcribe = get_transcriber("synthetic", cfg);
  auto rep = evaluate_zero_shot(model, corpus, embed, transcribe, 7);

  CHECK(std::isfinite(rep.sim));
  CHECK(rep.sim >= -1.0);
  CHECK(rep.sim <= 1.0);
  CHECK(std::isfinite(rep.cer));
  CHECK(rep.cer >= 0.0);
  REQUIRE(rep.embeddings.size() == 2 * corpus.utts.size());
  std::map<std::string, int> real_count, synth_count;
  for (const auto& r : rep.embeddings) (r.synthetic ? synth_count : real_count)[r.label]++;
  CHECK(real_count == synth_count);
  CHECK(real_synth_centroid_distance(rep.embeddings) >= 0.0);

  CHECK_THROWS_AS(get_embedder("nope", cfg), std::invalid_argument);
  CHECK_THROWS_AS(get_transcriber("nope", cfg), std::invalid_argument);
}
