#ifndef SDTTS_CONFIG_HPP
#define SDTTS_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace sdtts {

// Flat key=value run configuration. Every field has a usable default; files
// and --set overrides replace individual keys. Unknown keys are an error so
// typos surface immediately.
struct RunConfig {
  // corpus
  int corpus_speakers = 4;
  int corpus_utts_per_speaker = 8;
  int corpus_vocab = 12;
  int corpus_min_phonemes = 4;
  int corpus_max_phonemes = 10;
  int corpus_min_duration = 2;
  int corpus_max_duration = 6;
  uint64_t corpus_seed = 1;
  uint64_t content_seed = 77;
  int mel_bins = 80;
  int hop = 256;
  int sample_rate = 22050;

  // model
  uint64_t model_seed = 7;
  int d_model = 192;
  int d_latent = 16;
  int d_spk = 128;
  int n_blocks = 4;
  int n_heads = 2;
  int ffn_mult = 4;
  int rel_window = 16;
  int flow_steps = 4;
  int flow_hidden = 64;
  int mel_enc_channels = 32;
  int mel_enc_layers = 2;
  int mel_enc_kernel_t = 3;
  int style_channels = 32;
  int style_layers = 2;
  int dec_channels = 128;
  int dec_blocks = 2;
  int dec_kernel = 3;
  int var_heads = 2;
  int var_hidden = 128;
  int disc_channels = 16;
  int disc_layers = 4;
  int timbre_dim = 64;
  uint64_t timbre_stub_seed = 4242;
  double logvar_min = -9.0;
  double logvar_max = 2.0;

  // training / distillation
  uint64_t train_seed = 1234;
  int batch_size = 64;
  double sigma = 0.8;
  uint64_t pair_seed = 555;
  std::string prompt_policy = "other-speaker";  // pair-generation prompt source
  double lr = 2e-4;
  int warmup_steps = 1000;
  int train_steps = 2000;
  double rec_weight = 1.0;
  double kl_weight = 0.02;
  double adv_weight = 1.0;
  double pred_weight = 1.0;
  double cyc_weight = 1.0;
  double grad_clip = 5.0;  // 0 disables clipping
  double noise_scale = 0.6;
  int cyc_include_positive = 0;  // off by default; alternative denominator form
  int fuse_direct_emel = 0;      // bypass latent path and fuse frame features directly
  int log_every = 50;

  // evaluation
  uint64_t eval_embedder_seed = 9001;
};

// Visit every field as (name, reference). The single enumeration point keeps
// parse, serialize, and override logic in sync.
template <typename Fn>
void for_each_key(RunConfig& c, Fn&& fn) {
  fn("corpus_speakers", c.corpus_speakers);
  fn("corpus_utts_per_speaker", c.corpus_utts_per_speaker);
  fn("corpus_vocab", c.corpus_vocab);
  fn("corpus_min_phonemes", c.corpus_min_phonemes);
  fn("corpus_max_phonemes", c.corpus_max_phonemes);
  fn("corpus_min_duration", c.corpus_min_duration);
  fn("corpus_max_duration", c.corpus_max_duration);
  fn("corpus_seed", c.corpus_seed);
  fn("content_seed", c.content_seed);
  fn("mel_bins", c.mel_bins);
  fn("hop", c.hop);
  fn("sample_rate", c.sample_rate);
  fn("model_seed", c.model_seed);
  fn("d_model", c.d_model);
  fn("d_latent", c.d_latent);
  fn("d_spk", c.d_spk);
  fn("n_blocks", c.n_blocks);
  fn("n_heads", c.n_heads);
  fn("ffn_mult", c.ffn_mult);
  fn("rel_window", c.rel_window);
  fn("flow_steps", c.flow_steps);
  fn("flow_hidden", c.flow_hidden);
  fn("mel_enc_channels", c.mel_enc_channels);
  fn("mel_enc_layers", c.mel_enc_layers);
  fn("mel_enc_kernel_t", c.mel_enc_kernel_t);
  fn("style_channels", c.style_channels);
  fn("style_layers", c.style_layers);
  fn("dec_channels", c.dec_channels);
  fn("dec_blocks", c.dec_blocks);
  fn("dec_kernel", c.dec_kernel);
  fn("var_heads", c.var_heads);
  fn("var_hidden", c.var_hidden);
  fn("disc_channels", c.disc_channels);
  fn("disc_layers", c.disc_layers);
  fn("timbre_dim", c.timbre_dim);
  fn("timbre_stub_seed", c.timbre_stub_seed);
  fn("logvar_min", c.logvar_min);
  fn("logvar_max", c.logvar_max);
  fn("train_seed", c.train_seed);
  fn("batch_size", c.batch_size);
  fn("sigma", c.sigma);
  fn("pair_seed", c.pair_seed);
  fn("prompt_policy", c.prompt_policy);
  fn("lr", c.lr);
  fn("warmup_steps", c.warmup_steps);
  fn("train_steps", c.train_steps);
  fn("rec_weight", c.rec_weight);
  fn("kl_weight", c.kl_weight);
  fn("adv_weight", c.adv_weight);
  fn("pred_weight", c.pred_weight);
  fn("cyc_weight", c.cyc_weight);
  fn("grad_clip", c.grad_clip);
  fn("noise_scale", c.noise_scale);
  fn("cyc_include_positive", c.cyc_include_positive);
  fn("fuse_direct_emel", c.fuse_direct_emel);
  fn("log_every", c.log_every);
  fn("eval_embedder_seed", c.eval_embedder_seed);
}

// Throws std::runtime_error on unknown keys or unparseable values.
void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value);
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);
// key=value pairs such as "sigma=0.5"
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& sets);
std::string config_to_text(const RunConfig& cfg);
// Cross-field sanity checks (ranges, divisibility); throws std::runtime_error.
void validate_config(const RunConfig& cfg);

}  // namespace sdtts

#endif
