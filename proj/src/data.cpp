#include "sdtts/data.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "sdtts/io_util.hpp"
#include "sdtts/rng.hpp"

namespace sdtts {

namespace {
constexpr char kMelMagic[8] = {'S', 'D', 'T', 'T', 'S', 'M', 'E', 'L'};
constexpr uint32_t kMelVersion = 1;
constexpr char kManifestTag[] = "sdtts-corpus";
constexpr uint32_t kManifestVersion = 1;
}  // namespace

void Corpus::rebuild_speaker_index() {
  by_speaker.clear();
  for (size_t i = 0; i < utts.size(); ++i)
    by_speaker[utts[i].speaker].push_back(static_cast<int>(i));
}

void Corpus::validate() const {
  if (mel_bins <= 0) throw std::runtime_error("corpus: mel_bins must be positive");
  if (vocab_size <= 0) throw std::runtime_error("corpus: vocab_size must be positive");
  if (utts.empty()) throw std::runtime_error("corpus: no utterances");
  for (const Utterance& u : utts) {
    const std::string where = "utterance '" + u.id + "'";
    if (u.speaker.empty()) throw std::runtime_error(where + ": empty speaker label");
    if (u.phonemes.empty()) throw std::runtime_error(where + ": empty phoneme sequence");
    if (u.durations.size() != u.phonemes.size() || u.pitch.size() != u.phonemes.size() ||
        u.energy.size() != u.phonemes.size())
      throw std::runtime_error(where + ": phoneme/duration/pitch/energy length mismatch");
    for (int p : u.phonemes)
      if (p < 0 || p >= vocab_size)
        throw std::runtime_error(where + ": phoneme id " + std::to_string(p) +
                                 " outside vocabulary of size " + std::to_string(vocab_size));
    for (int d : u.durations)
      if (d < 1) throw std::runtime_error(where + ": duration must be >= 1");
    if (u.mel.num_bins() != mel_bins)
      throw std::runtime_error(where + ": mel has " + std::to_string(u.mel.num_bins()) +
                               " bins, corpus declares " + std::to_string(mel_bins));
    if (u.mel.num_frames() != u.total_frames())
      throw std::runtime_error(where + ": mel has " + std::to_string(u.mel.num_frames()) +
                               " frames but durations sum to " + std::to_string(u.total_frames()));
    if (!u.mel.frames.all_finite()) throw std::runtime_error(where + ": non-finite mel values");
  }
}

void save_mel(const std::string& path, const Mel& mel) {
  if (mel.frames.rank() != 2) throw std::runtime_error("save_mel: frames must be rank 2");
  BinaryWriter w;
  w.bytes(kMelMagic, 8);
  w.u32(kMelVersion);
  w.u32(static_cast<uint32_t>(mel.num_frames()));
  w.u32(static_cast<uint32_t>(mel.num_bins()));
  w.u32(static_cast<uint32_t>(mel.hop));
  w.u32(static_cast<uint32_t>(mel.sample_rate));
  for (float v : mel.frames.data) w.f32(v);
  write_file_atomic(path, w.data());
}

Mel load_mel(const std::string& path) {
  std::string blob = read_file(path);
  BinaryReader r(blob, "mel file " + path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMelMagic, 8) != 0)
    throw std::runtime_error("mel file " + path + ": bad magic");
  uint32_t version = r.u32();
  if (version != kMelVersion)
    throw std::runtime_error("mel file " + path + ": unsupported version " + std::to_string(version));
  int t = static_cast<int>(r.u32());
  int f = static_cast<int>(r.u32());
  Mel mel;
  mel.hop = static_cast<int>(r.u32());
  mel.sample_rate = static_cast<int>(r.u32());
  if (t < 0 || f <= 0) throw std::runtime_error("mel file " + path + ": bad dimensions");
  mel.frames = nn::Tensor<float>({t, f});
  for (auto& v : mel.frames.data) v = r.f32();
  return mel;
}

namespace {

std::string record_text(const Utterance& u) {
  std::ostringstream os;
  os << "id " << u.id << "\n";
  os << "speaker " << u.speaker << "\n";
  os << "text " << u.text << "\n";
  os << "phonemes";
  for (int p : u.phonemes) os << ' ' << p;
  os << "\ndurations";
  for (int d : u.durations) os << ' ' << d;
  os << "\npitch";
  for (float v : u.pitch) os << ' ' << fmt_float(v);
  os << "\nenergy";
  for (float v : u.energy) os << ' ' << fmt_float(v);
  os << "\nmel " << u.mel_path << "\n";
  return os.str();
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

}  // namespace

void save_corpus(const std::string& dir, const Corpus& corpus) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "records");
  fs::create_directories(fs::path(dir) / "mels");
  std::ostringstream manifest;
  manifest << kManifestTag << ' ' << kManifestVersion << "\n";
  manifest << "mel_bins " << corpus.mel_bins << "\n";
  manifest << "hop " << corpus.hop << "\n";
  manifest << "sample_rate " << corpus.sample_rate << "\n";
  manifest << "vocab_size " << corpus.vocab_size << "\n";
  for (const Utterance& u : corpus.utts) {
    std::string rec_rel = "records/" + u.id + ".txt";
    std::string mel_rel = u.mel_path.empty() ? ("mels/" + u.id + ".mel") : u.mel_path;
    Utterance copy = u;
    copy.mel_path = mel_rel;
    write_file_atomic((fs::path(dir) / rec_rel).string(), record_text(copy));
    save_mel((fs::path(dir) / mel_rel).string(), u.mel);
    manifest << "utterance " << u.id << ' ' << rec_rel << "\n";
  }
  write_file_atomic((fs::path(dir) / "manifest.txt").string(), manifest.str());
}

namespace {

Utterance load_record(const std::string& path) {
  Utterance u;
  std::istringstream is(read_file(path));
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "id") {
      ls >> u.id;
    } else if (key == "speaker") {
      ls >> u.speaker;
    } else if (key == "text") {
      std::string rest;
      std::getline(ls, rest);
      if (!rest.empty() && rest[0] == ' ') rest.erase(0, 1);
      u.text = rest;
    } else if (key == "phonemes") {
      int v;
      while (ls >> v) u.phonemes.push_back(v);
    } else if (key == "durations") {
      int v;
      while (ls >> v) u.durations.push_back(v);
    } else if (key == "pitch") {
      float v;
      while (ls >> v) u.pitch.push_back(v);
    } else if (key == "energy") {
      float v;
      while (ls >> v) u.energy.push_back(v);
    } else if (key == "mel") {
      ls >> u.mel_path;
    } else {
      throw std::runtime_error("record " + path + ": unknown key '" + key + "'");
    }
  }
  if (u.id.empty()) throw std::runtime_error("record " + path + ": missing id");
  return u;
}

}  // namespace

Corpus load_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  Corpus c;
  c.root = dir;
  std::istringstream is(read_file((fs::path(dir) / "manifest.txt").string()));
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("corpus " + dir + ": empty manifest");
  auto head = split_ws(line);
  if (head.size() != 2 || head[0] != kManifestTag)
    throw std::runtime_error("corpus " + dir + ": bad manifest header '" + line + "'");
  if (std::stoi(head[1]) != static_cast<int>(kManifestVersion))
    throw std::runtime_error("corpus " + dir + ": unsupported manifest version " + head[1]);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto toks = split_ws(line);
    if (toks[0] == "mel_bins" && toks.size() == 2) {
      c.mel_bins = std::stoi(toks[1]);
    } else if (toks[0] == "hop" && toks.size() == 2) {
      c.hop = std::stoi(toks[1]);
    } else if (toks[0] == "sample_rate" && toks.size() == 2) {
      c.sample_rate = std::stoi(toks[1]);
    } else if (toks[0] == "vocab_size" && toks.size() == 2) {
      c.vocab_size = std::stoi(toks[1]);
    } else if (toks[0] == "utterance" && toks.size() == 3) {
      Utterance u = load_record((fs::path(dir) / toks[2]).string());
      u.mel = load_mel((fs::path(dir) / u.mel_path).string());
      c.utts.push_back(std::move(u));
    } else {
      throw std::runtime_error("corpus " + dir + ": bad manifest line '" + line + "'");
    }
  }
  c.rebuild_speaker_index();
  c.validate();
  return c;
}

std::vector<std::vector<float>> phoneme_patterns(uint64_t content_seed, int vocab_size, int mel_bins) {
  if (vocab_size <= 0 || mel_bins <= 0)
    throw std::runtime_error("phoneme_patterns: vocab_size and mel_bins must be positive");
  std::vector<std::vector<float>> bank(static_cast<size_t>(vocab_size));
  for (int p = 0; p < vocab_size; ++p) {
    Rng rng(mix_seed(content_seed, 0x9000 + static_cast<uint64_t>(p)));
    std::vector<float>& pat = bank[static_cast<size_t>(p)];
    pat.resize(static_cast<size_t>(mel_bins));
    double mean = 0;
    for (auto& v : pat) {
      v = static_cast<float>(rng.normal());
      mean += v;
    }
    mean /= mel_bins;
    double norm = 0;
    for (auto& v : pat) {
      v -= static_cast<float>(mean);
      norm += static_cast<double>(v) * v;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-6) norm = 1.0;  // vanishingly unlikely, but keep it defined
    for (auto& v : pat) v = static_cast<float>(v / norm);
  }
  return bank;
}

namespace {

// Smooth spectral bump whose height tracks the pitch annotation, so pitch is
// recoverable from the rendered frames.
float pitch_band(int bin, int mel_bins) {
  double center = mel_bins / 4.0;
  double width = mel_bins / 8.0 + 1.0;
  double d = (bin - center) / width;
  return static_cast<float>(std::exp(-0.5 * d * d));
}

}  // namespace

Corpus make_synthetic_corpus(const SynthSpec& spec) {
  if (spec.n_speakers < 1 || spec.utts_per_speaker < 1)
    throw std::runtime_error("make_synthetic_corpus: need at least one speaker and utterance");
  if (spec.min_phonemes < 1 || spec.max_phonemes < spec.min_phonemes)
    throw std::runtime_error("make_synthetic_corpus: bad phoneme length range");
  if (spec.min_duration < 1 || spec.max_duration < spec.min_duration)
    throw std::runtime_error("make_synthetic_corpus: bad duration range");
  if (spec.vocab_size < 2) throw std::runtime_error("make_synthetic_corpus: vocab_size must be >= 2");

  Corpus c;
  c.mel_bins = spec.mel_bins;
  c.hop = spec.hop;
  c.sample_rate = spec.sample_rate;
  c.vocab_size = spec.vocab_size;
  auto bank = phoneme_patterns(spec.content_seed, spec.vocab_size, spec.mel_bins);

  for (int s = 0; s < spec.n_speakers; ++s) {
    Rng srng(mix_seed(spec.seed, 0x5000 + static_cast<uint64_t>(s)));
    std::vector<float> offset(static_cast<size_t>(spec.mel_bins));
    for (auto& v : offset) v = static_cast<float>(srng.normal() * 0.8);
    float pitch_base = static_cast<float>(srng.uniform(-1.0, 1.0));
    float energy_base = static_cast<float>(srng.uniform(0.8, 1.2));
    std::string speaker = "spk" + std::to_string(spec.seed) + "_" + std::to_string(s);

    for (int j = 0; j < spec.utts_per_speaker; ++j) {
      Rng urng(mix_seed(mix_seed(spec.seed, 0x7000 + static_cast<uint64_t>(s)),
                        static_cast<uint64_t>(j)));
      Utterance u;
      u.speaker = speaker;
      u.id = speaker + "_u" + std::to_string(j);
      int len = spec.min_phonemes +
                static_cast<int>(urng.below(static_cast<uint64_t>(spec.max_phonemes - spec.min_phonemes + 1)));
      u.phonemes.reserve(static_cast<size_t>(len));
      for (int i = 0; i < len; ++i) {
        int p = static_cast<int>(urng.below(static_cast<uint64_t>(spec.vocab_size)));
        // Adjacent repeats would be invisible to run-collapsing transcription.
        if (i > 0 && p == u.phonemes.back()) p = (p + 1) % spec.vocab_size;
        u.phonemes.push_back(p);
      }
      std::ostringstream text;
      for (int i = 0; i < len; ++i) text << (i ? " " : "") << 'p' << u.phonemes[static_cast<size_t>(i)];
      u.text = text.str();
      int total = 0;
      for (int i = 0; i < len; ++i) {
        int d = spec.min_duration +
                static_cast<int>(urng.below(static_cast<uint64_t>(spec.max_duration - spec.min_duration + 1)));
        u.durations.push_back(d);
        total += d;
      }
      for (int i = 0; i < len; ++i) {
        u.pitch.push_back(pitch_base + static_cast<float>(urng.uniform(-0.5, 0.5)));
        u.energy.push_back(energy_base * static_cast<float>(urng.uniform(0.7, 1.3)));
      }
      u.mel.hop = spec.hop;
      u.mel.sample_rate = spec.sample_rate;
      u.mel.frames = nn::Tensor<float>({total, spec.mel_bins});
      int t = 0;
      for (int i = 0; i < len; ++i) {
        const auto& pat = bank[static_cast<size_t>(u.phonemes[static_cast<size_t>(i)])];
        for (int k = 0; k < u.durations[static_cast<size_t>(i)]; ++k, ++t)
          for (int b = 0; b < spec.mel_bins; ++b)
            u.mel.frames(t, b) = offset[static_cast<size_t>(b)] +
                                 u.energy[static_cast<size_t>(i)] * pat[static_cast<size_t>(b)] +
                                 0.15f * u.pitch[static_cast<size_t>(i)] * pitch_band(b, spec.mel_bins) +
                                 static_cast<float>(urng.normal() * 0.02);
      }
      u.mel_path = "mels/" + u.id + ".mel";
      c.utts.push_back(std::move(u));
    }
  }
  c.rebuild_speaker_index();
  c.validate();
  return c;
}

}  // namespace sdtts
