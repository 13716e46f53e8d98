#include "sdtts/config.hpp"

#include <sstream>
#include <stdexcept>

#include "sdtts/io_util.hpp"

namespace sdtts {

namespace {

void parse_value(const std::string& key, const std::string& text, int& out) {
  size_t used = 0;
  out = std::stoi(text, &used);
  if (used != text.size()) throw std::runtime_error("config: bad integer for " + key + ": '" + text + "'");
}

void parse_value(const std::string& key, const std::string& text, uint64_t& out) {
  size_t used = 0;
  out = std::stoull(text, &used);
  if (used != text.size()) throw std::runtime_error("config: bad integer for " + key + ": '" + text + "'");
}

void parse_value(const std::string& key, const std::string& text, double& out) {
  size_t used = 0;
  out = std::stod(text, &used);
  if (used != text.size()) throw std::runtime_error("config: bad number for " + key + ": '" + text + "'");
}

void parse_value(const std::string& key, const std::string& text, std::string& out) {
  if (text.empty()) throw std::runtime_error("config: empty value for " + key);
  out = text;
}

std::string render_value(int v) { return std::to_string(v); }
std::string render_value(uint64_t v) { return std::to_string(v); }
std::string render_value(double v) { return fmt_float(v); }
std::string render_value(const std::string& v) { return v; }

}  // namespace

void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value) {
  bool found = false;
  for_each_key(cfg, [&](const char* name, auto& field) {
    if (found || key != name) return;
    found = true;
    try {
      parse_value(key, value, field);
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("config: bad value for " + key + ": '" + value + "'");
    } catch (const std::out_of_range&) {
      throw std::runtime_error("config: value out of range for " + key + ": '" + value + "'");
    }
  });
  if (!found) throw std::runtime_error("config: unknown key '" + key + "'");
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    size_t a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    size_t b = line.find_last_not_of(" \t\r");
    line = line.substr(a, b - a + 1);
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    size_t v0 = value.find_first_not_of(" \t");
    value = v0 == std::string::npos ? "" : value.substr(v0);
    apply_config_line(cfg, key, value);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) { return parse_config_text(read_file(path)); }

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& sets) {
  for (const std::string& s : sets) {
    size_t eq = s.find('=');
    if (eq == std::string::npos) throw std::runtime_error("config: override is not key=value: '" + s + "'");
    apply_config_line(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
}

std::string config_to_text(const RunConfig& cfg) {
  std::ostringstream os;
  for_each_key(const_cast<RunConfig&>(cfg),
               [&](const char* name, auto& field) { os << name << " = " << render_value(field) << "\n"; });
  return os.str();
}

void validate_config(const RunConfig& cfg) {
  auto fail = [](const std::string& msg) { throw std::runtime_error("config: " + msg); };
  if (cfg.mel_bins < 4) fail("mel_bins must be >= 4");
  if (cfg.corpus_vocab < 2) fail("corpus_vocab must be >= 2");
  if (cfg.corpus_min_phonemes < 1 || cfg.corpus_max_phonemes < cfg.corpus_min_phonemes)
    fail("bad corpus phoneme length range");
  if (cfg.corpus_min_duration < 1 || cfg.corpus_max_duration < cfg.corpus_min_duration)
    fail("bad corpus duration range");
  if (cfg.d_model < 2 || cfg.d_spk < 2 || cfg.d_latent < 2) fail("model dims must be >= 2");
  if (cfg.d_model % cfg.n_heads != 0) fail("d_model must be divisible by n_heads");
  if (cfg.d_model % cfg.var_heads != 0) fail("d_model must be divisible by var_heads");
  if (cfg.d_latent % 2 != 0) fail("d_latent must be even (coupling split)");
  if (cfg.flow_steps < 1) fail("flow_steps must be >= 1");
  if (cfg.mel_enc_layers < 1 || cfg.style_layers < 1 || cfg.dec_blocks < 0) fail("bad layer counts");
  if (cfg.mel_enc_kernel_t < 1 || cfg.mel_enc_kernel_t % 2 == 0) fail("mel_enc_kernel_t must be odd");
  if (cfg.dec_kernel < 1 || cfg.dec_kernel % 2 == 0) fail("dec_kernel must be odd");
  if (cfg.disc_layers < 1) fail("disc_layers must be >= 1");
  if (cfg.batch_size < 1) fail("batch_size must be >= 1");
  if (cfg.sigma < 0.0 || cfg.sigma > 1.0) fail("sigma must lie in [0, 1]");
  if (cfg.prompt_policy != "other-speaker")
    fail("unknown prompt_policy '" + cfg.prompt_policy + "' (available: other-speaker)");
  if (cfg.lr <= 0.0) fail("lr must be positive");
  if (cfg.train_steps < 1) fail("train_steps must be >= 1");
  if (cfg.logvar_min >= cfg.logvar_max) fail("logvar_min must be below logvar_max");
  if (cfg.cyc_weight > 0.0 && cfg.batch_size < 2)
    fail("cycle loss needs batch_size >= 2 (its denominator runs over other batch items)");
  if (cfg.timbre_dim < 1) fail("timbre_dim must be >= 1");
}

}  // namespace sdtts
