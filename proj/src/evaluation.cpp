#include "sdtts/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "sdtts/io_util.hpp"
#include "sdtts/rng.hpp"

namespace sdtts {

double cosine_sim(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("cosine_sim: vectors must share a non-zero dimension");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) throw std::invalid_argument("cosine_sim: zero-norm vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

int levenshtein(const std::vector<int>& hyp, const std::vector<int>& ref) {
  size_t n = hyp.size(), m = ref.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double cer(const std::vector<int>& hyp, const std::vector<int>& ref) {
  if (ref.empty()) throw std::invalid_argument("cer: empty reference");
  return static_cast<double>(levenshtein(hyp, ref)) / static_cast<double>(ref.size());
}

Embedder make_stat_embedder(uint64_t seed, int mel_bins, int dim) {
  if (mel_bins < 1 || dim < 1) throw std::invalid_argument("stat embedder: bad dimensions");
  // Fixed projection of [col means; col stds]; shared by everyone holding the
  // same seed, so embeddings are comparable across runs.
  auto w = std::make_shared<std::vector<float>>(static_cast<size_t>(2 * mel_bins * dim));
  Rng rng(mix_seed(seed, 0x57A7ull));
  double scale = 1.0 / std::sqrt(static_cast<double>(2 * mel_bins));
  for (auto& v : *w) v = static_cast<float>(rng.normal() * scale);
  return [w, mel_bins, dim](const Mel& mel) {
    if (mel.num_bins() != mel_bins)
      throw std::invalid_argument("stat embedder: mel has " + std::to_string(mel.num_bins()) +
                                  " bins, expected " + std::to_string(mel_bins));
    if (mel.num_frames() < 1) throw std::invalid_argument("stat embedder: empty mel");
    int T = mel.num_frames(), F = mel_bins;
    std::vector<double> stats(static_cast<size_t>(2 * F), 0.0);
    for (int t = 0; t < T; ++t)
      for (int f = 0; f < F; ++f) stats[static_cast<size_t>(f)] += mel.frames(t, f);
    for (int f = 0; f < F; ++f) stats[static_cast<size_t>(f)] /= T;
    for (int t = 0; t < T; ++t)
      for (int f = 0; f < F; ++f) {
        double d = mel.frames(t, f) - stats[static_cast<size_t>(f)];
        stats[static_cast<size_t>(F + f)] += d * d;
      }
    for (int f = 0; f < F; ++f)
      stats[static_cast<size_t>(F + f)] = std::sqrt(stats[static_cast<size_t>(F + f)] / T + 1e-8);
    std::vector<float> out(static_cast<size_t>(dim), 0.0f);
    for (int k = 0; k < 2 * F; ++k)
      for (int d = 0; d < dim; ++d)
        out[static_cast<size_t>(d)] +=
            static_cast<float>(stats[static_cast<size_t>(k)]) * (*w)[static_cast<size_t>(k * dim + d)];
    return out;
  };
}

Embedder get_embedder(const std::string& name, const RunConfig& cfg) {
  if (name == "stat") return make_stat_embedder(cfg.eval_embedder_seed, cfg.mel_bins, cfg.timbre_dim);
  throw std::invalid_argument("unknown embedder '" + name + "' (available: stat)");
}

Transcriber make_pattern_transcriber(uint64_t content_seed, int vocab_size, int mel_bins) {
  auto bank = std::make_shared<std::vector<std::vector<float>>>(
      phoneme_patterns(content_seed, vocab_size, mel_bins));
  return [bank, mel_bins, vocab_size](const Mel& mel) {
    if (mel.num_bins() != mel_bins)
      throw std::invalid_argument("transcriber: mel has " + std::to_string(mel.num_bins()) +
                                  " bins, expected " + std::to_string(mel_bins));
    int T = mel.num_frames(), F = mel_bins;
    if (T < 1) return std::vector<int>{};
    // Speaker offsets are (approximately) the temporal mean; remove them
    // before matching against the zero-mean pattern bank.
    std::vector<double> mean(static_cast<size_t>(F), 0.0);
    for (int t = 0; t < T; ++t)
      for (int f = 0; f < F; ++f) mean[static_cast<size_t>(f)] += mel.frames(t, f);
    for (auto& v : mean) v /= T;
    std::vector<int> frame_ids;
    frame_ids.reserve(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
      int best = 0;
      double best_score = -1e300;
      for (int p = 0; p < vocab_size; ++p) {
        double s = 0;
        for (int f = 0; f < F; ++f)
          s += (mel.frames(t, f) - mean[static_cast<size_t>(f)]) *
               (*bank)[static_cast<size_t>(p)][static_cast<size_t>(f)];
        if (s > best_score) {
          best_score = s;
          best = p;
        }
      }
      frame_ids.push_back(best);
    }
    std::vector<int> out;
    for (int id : frame_ids)
      if (out.empty() || out.back() != id) out.push_back(id);
    return out;
  };
}

Transcriber get_transcriber(const std::string& name, const RunConfig& cfg) {
  if (name == "synthetic")
    return make_pattern_transcriber(cfg.content_seed, cfg.corpus_vocab, cfg.mel_bins);
  throw std::invalid_argument("unknown transcriber '" + name + "' (available: synthetic)");
}

double eval_sim(const std::vector<Mel>& synths, const std::vector<Mel>& prompts, const Embedder& embed) {
  if (synths.size() != prompts.size() || synths.empty())
    throw std::invalid_argument("eval_sim: need matching non-empty synth/prompt lists");
  double sum = 0;
  for (size_t i = 0; i < synths.size(); ++i) sum += cosine_sim(embed(synths[i]), embed(prompts[i]));
  return sum / static_cast<double>(synths.size());
}

double eval_cer(const std::vector<Mel>& synths, const std::vector<std::vector<int>>& refs,
                const Transcriber& transcribe) {
  if (synths.size() != refs.size() || synths.empty())
    throw std::invalid_argument("eval_cer: need matching non-empty synth/reference lists");
  double sum = 0;
  for (size_t i = 0; i < synths.size(); ++i) sum += cer(transcribe(synths[i]), refs[i]);
  return sum / static_cast<double>(synths.size());
}

RtfResult measure_rtf(const std::function<int()>& synth_once, int hop, int sample_rate, int warmup,
                      int repeats) {
  if (repeats < 1) throw std::invalid_argument("measure_rtf: need at least one timed repeat");
  if (hop < 1 || sample_rate < 1) throw std::invalid_argument("measure_rtf: bad hop or sample rate");
  for (int i = 0; i < warmup; ++i) synth_once();
  std::vector<double> walls;
  int frames = 0;
  for (int i = 0; i < repeats; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    frames = synth_once();
    auto t1 = std::chrono::steady_clock::now();
    walls.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  if (frames < 1) throw std::runtime_error("measure_rtf: synthesis produced no frames");
  std::sort(walls.begin(), walls.end());
  double median = walls.size() % 2 == 1
                      ? walls[walls.size() / 2]
                      : 0.5 * (walls[walls.size() / 2 - 1] + walls[walls.size() / 2]);
  RtfResult r;
  r.frames = frames;
  r.audio_s = static_cast<double>(frames) * hop / sample_rate;
  r.median_wall_s = median;
  r.rtf = median / r.audio_s;
  return r;
}

void export_embeddings(const std::string& path, const std::vector<EmbeddingRow>& rows) {
  std::ostringstream os;
  for (const EmbeddingRow& r : rows) {
    if (r.label.empty() || r.label.find(' ') != std::string::npos)
      throw std::invalid_argument("export_embeddings: labels must be non-empty and space-free");
    os << r.label << ' ' << (r.synthetic ? "synth" : "real");
    for (float v : r.vec) os << ' ' << fmt_float(v);
    os << "\n";
  }
  write_file_atomic(path, os.str());
}

std::vector<EmbeddingRow> load_embeddings(const std::string& path) {
  std::vector<EmbeddingRow> rows;
  std::istringstream is(read_file(path));
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    EmbeddingRow r;
    std::string kind;
    ls >> r.label >> kind;
    if (kind != "real" && kind != "synth")
      throw std::runtime_error("embeddings " + path + ": bad row '" + line + "'");
    r.synthetic = kind == "synth";
    float v;
    while (ls >> v) r.vec.push_back(v);
    if (r.vec.empty()) throw std::runtime_error("embeddings " + path + ": row without values");
    rows.push_back(std::move(r));
  }
  return rows;
}

double real_synth_centroid_distance(const std::vector<EmbeddingRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("centroid distance: no rows");
  struct Acc {
    std::vector<double> sum;
    int n = 0;
  };
  std::map<std::string, Acc> real, synth;
  for (const EmbeddingRow& r : rows) {
    Acc& a = (r.synthetic ? synth : real)[r.label];
    if (a.sum.empty()) a.sum.assign(r.vec.size(), 0.0);
    if (a.sum.size() != r.vec.size())
      throw std::invalid_argument("centroid distance: inconsistent dimensions for '" + r.label + "'");
    for (size_t i = 0; i < r.vec.size(); ++i) a.sum[i] += r.vec[i];
    a.n += 1;
  }
  if (real.size() != synth.size()) throw std::invalid_argument("centroid distance: unpaired labels");
  double total = 0;
  int count = 0;
  for (auto& [label, ra] : real) {
    auto it = synth.find(label);
    if (it == synth.end())
      throw std::invalid_argument("centroid distance: no synthetic rows for '" + label + "'");
    Acc& sa = it->second;
    double d2 = 0;
    for (size_t i = 0; i < ra.sum.size(); ++i) {
      double d = ra.sum[i] / ra.n - sa.sum[i] / sa.n;
      d2 += d * d;
    }
    total += std::sqrt(d2);
    ++count;
  }
  return total / count;
}

}  // namespace sdtts
