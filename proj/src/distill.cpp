#include "sdtts/distill.hpp"

#include <filesystem>
#include <sstream>

#include "sdtts/io_util.hpp"

namespace sdtts {

namespace {
constexpr char kPairsTag[] = "sdtts-pairs";
constexpr int kPairsVersion = 1;
}  // namespace

void save_pairs(const std::string& dir, const PairSet& set) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "mels");
  std::ostringstream manifest;
  manifest << kPairsTag << ' ' << kPairsVersion << "\n";
  for (const PairRecord& p : set.pairs) {
    save_mel((fs::path(dir) / p.mel_path).string(), p.synth);
    manifest << "pair " << p.content_id << ' ' << p.prompt_id << ' ' << p.mel_path << "\n";
  }
  write_file_atomic((fs::path(dir) / "pairs.txt").string(), manifest.str());
}

PairSet load_pairs(const std::string& dir) {
  namespace fs = std::filesystem;
  PairSet set;
  set.root = dir;
  std::istringstream is(read_file((fs::path(dir) / "pairs.txt").string()));
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("pair set " + dir + ": empty manifest");
  std::istringstream head(line);
  std::string tag;
  int version = 0;
  head >> tag >> version;
  if (tag != kPairsTag || version != kPairsVersion)
    throw std::runtime_error("pair set " + dir + ": bad manifest header '" + line + "'");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    PairRecord rec;
    ls >> key >> rec.content_id >> rec.prompt_id >> rec.mel_path;
    if (key != "pair" || rec.content_id.empty() || rec.prompt_id.empty() || rec.mel_path.empty())
      throw std::runtime_error("pair set " + dir + ": bad manifest line '" + line + "'");
    rec.synth = load_mel((fs::path(dir) / rec.mel_path).string());
    set.pairs.push_back(std::move(rec));
  }
  set.rebuild_index();
  return set;
}

void validate_pairs(const PairSet& set, const Corpus& corpus) {
  std::map<std::string, const Utterance*> by_id;
  for (const Utterance& u : corpus.utts) by_id[u.id] = &u;
  for (const Utterance& u : corpus.utts)
    if (!set.by_content.count(u.id))
      throw std::runtime_error("pair set: no pair for utterance '" + u.id + "'");
  for (const PairRecord& p : set.pairs) {
    auto it = by_id.find(p.content_id);
    if (it == by_id.end())
      throw std::runtime_error("pair set: unknown content utterance '" + p.content_id + "'");
    auto pt = by_id.find(p.prompt_id);
    if (pt == by_id.end())
      throw std::runtime_error("pair set: unknown prompt utterance '" + p.prompt_id + "'");
    if (pt->second->speaker == it->second->speaker)
      throw std::runtime_error("pair set: prompt for '" + p.content_id +
                               "' comes from the same speaker");
    if (p.synth.num_frames() != it->second->total_frames())
      throw std::runtime_error("pair set: '" + p.content_id + "' has " +
                               std::to_string(p.synth.num_frames()) + " synthetic frames, expected " +
                               std::to_string(it->second->total_frames()));
    if (p.synth.num_bins() != corpus.mel_bins)
      throw std::runtime_error("pair set: '" + p.content_id + "' mel bin mismatch");
  }
}

}  // namespace sdtts
