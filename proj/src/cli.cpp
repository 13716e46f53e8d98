#include "sdtts/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "sdtts/checkpoint.hpp"
#include "sdtts/config.hpp"
#include "sdtts/data.hpp"
#include "sdtts/distill.hpp"
#include "sdtts/evaluation.hpp"
#include "sdtts/io_util.hpp"
#include "sdtts/model.hpp"
#include "sdtts/trainer.hpp"

namespace sdtts {
namespace {

constexpr const char* kToolVersion = "0.1.0";

// SDTTS_OUT_DIR reroutes relative output paths so scripted runs can pick a
// scratch directory without touching every flag.
std::string resolve_out(const std::string& path) {
  const char* base = std::getenv("SDTTS_OUT_DIR");
  if (!base || !*base) return path;
  std::filesystem::path p(path);
  if (p.is_absolute()) return path;
  return (std::filesystem::path(base) / p).string();
}

RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& sets) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  apply_overrides(cfg, sets);
  validate_config(cfg);
  return cfg;
}

RunConfig config_from_checkpoint(const std::string& ckpt, const std::vector<std::string>& sets) {
  CheckpointInfo info = read_checkpoint_header(ckpt);
  RunConfig cfg = parse_config_text(info.config_text);
  apply_overrides(cfg, sets);
  validate_config(cfg);
  return cfg;
}

std::string record_text(const RunConfig& cfg, const std::vector<std::string>& args) {
  std::ostringstream os;
  os << "sdtts " << kToolVersion << "\nargv:";
  for (const auto& a : args) os << ' ' << a;
  os << "\n\n" << config_to_text(cfg);
  return os.str();
}

void write_record(const std::string& dir, const RunConfig& cfg, const std::vector<std::string>& args) {
  write_file_atomic((std::filesystem::path(dir) / "run_record.txt").string(),
                    record_text(cfg, args));
}

// Condensed reproducibility record for read-only commands whose output goes
// to stdout.
void print_record_line(std::ostream& out, const RunConfig& cfg) {
  out << "record: version=" << kToolVersion << " config_fnv=" << fnv1a64(config_to_text(cfg))
      << " model_seed=" << cfg.model_seed << " train_seed=" << cfg.train_seed
      << " pair_seed=" << cfg.pair_seed << "\n";
}

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::string norm = text;
  for (char& c : norm)
    if (c == ',') c = ' ';
  std::vector<int> out;
  std::istringstream is(norm);
  std::string tok;
  while (is >> tok) {
    size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &used);
    } catch (const std::exception&) {
      throw std::runtime_error(what + ": bad integer '" + tok + "'");
    }
    if (used != tok.size()) throw std::runtime_error(what + ": bad integer '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty()) throw std::runtime_error(what + ": empty list");
  return out;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
  std::string norm = text;
  for (char& c : norm)
    if (c == ',') c = ' ';
  std::vector<double> out;
  std::istringstream is(norm);
  std::string tok;
  while (is >> tok) {
    size_t used = 0;
    double v = 0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw std::runtime_error(what + ": bad number '" + tok + "'");
    }
    if (used != tok.size()) throw std::runtime_error(what + ": bad number '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty()) throw std::runtime_error(what + ": empty list");
  return out;
}

// The corpus on disk is authoritative for data dimensions; fold them into the
// config (and thus the checkpoint snapshot) so the model always matches.
void adopt_corpus_dims(RunConfig& cfg, const Corpus& corpus, std::ostream& out) {
  auto note = [&out](const char* name, int from, int to) {
    if (from != to) out << "note: " << name << " " << from << " -> " << to << " (from corpus)\n";
  };
  note("mel_bins", cfg.mel_bins, corpus.mel_bins);
  note("corpus_vocab", cfg.corpus_vocab, corpus.vocab_size);
  note("hop", cfg.hop, corpus.hop);
  note("sample_rate", cfg.sample_rate, corpus.sample_rate);
  cfg.mel_bins = corpus.mel_bins;
  cfg.corpus_vocab = corpus.vocab_size;
  cfg.hop = corpus.hop;
  cfg.sample_rate = corpus.sample_rate;
}

void require_corpus_match(const RunConfig& cfg, const Corpus& corpus, const std::string& what) {
  if (corpus.mel_bins != cfg.mel_bins || corpus.vocab_size != cfg.corpus_vocab)
    throw std::runtime_error(what + ": corpus has mel_bins=" + std::to_string(corpus.mel_bins) +
                             " vocab=" + std::to_string(corpus.vocab_size) +
                             ", model expects mel_bins=" + std::to_string(cfg.mel_bins) +
                             " vocab=" + std::to_string(cfg.corpus_vocab));
}

int cmd_make_corpus(const std::string& out_dir_arg, const std::string& config_path,
                    const std::vector<std::string>& sets, const std::vector<std::string>& args,
                    std::ostream& out) {
  RunConfig cfg = resolve_config(config_path, sets);
  SynthSpec spec;
  spec.n_speakers = cfg.corpus_speakers;
  spec.utts_per_speaker = cfg.corpus_utts_per_speaker;
  spec.mel_bins = cfg.mel_bins;
  spec.vocab_size = cfg.corpus_vocab;
  spec.min_phonemes = cfg.corpus_min_phonemes;
  spec.max_phonemes = cfg.corpus_max_phonemes;
  spec.min_duration = cfg.corpus_min_duration;
  spec.max_duration = cfg.corpus_max_duration;
  spec.hop = cfg.hop;
  spec.sample_rate = cfg.sample_rate;
  spec.seed = cfg.corpus_seed;
  spec.content_seed = cfg.content_seed;
  Corpus corpus = make_synthetic_corpus(spec);
  corpus.validate();
  std::string out_dir = resolve_out(out_dir_arg);
  save_corpus(out_dir, corpus);
  write_record(out_dir, cfg, args);
  out << "wrote corpus: " << corpus.utts.size() << " utterances, " << corpus.by_speaker.size()
      << " speakers, " << corpus.mel_bins << " mel bins -> " << out_dir << "\n";
  return 0;
}

int cmd_train(bool student, const std::string& corpus_dir, const std::string& pairs_dir,
              const std::string& out_dir_arg, const std::string& config_path,
              const std::vector<std::string>& sets, int steps_override,
              const std::vector<std::string>& args, std::ostream& out) {
  RunConfig cfg = resolve_config(config_path, sets);
  Corpus corpus = load_corpus(corpus_dir);
  adopt_corpus_dims(cfg, corpus, out);
  validate_config(cfg);

  PairSet pairs;
  if (student) {
    pairs = load_pairs(pairs_dir);
    validate_pairs(pairs, corpus);
  }

  nn::TtsModel<float> model(cfg);
  nn::Trainer<float> trainer(model, corpus, student ? &pairs : nullptr);

  int steps = steps_override > 0 ? steps_override : cfg.train_steps;
  std::string out_dir = resolve_out(out_dir_arg);
  std::filesystem::create_directories(out_dir);
  write_record(out_dir, cfg, args);

  std::string log_path = (std::filesystem::path(out_dir) / "train_log.txt").string();
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw std::runtime_error("cannot open log for writing: " + log_path);
  trainer.on_report = [&](const nn::LossReport& r) {
    log << r.to_line() << "\n";
    log.flush();
    if (cfg.log_every > 0 &&
        (r.step == 1 || r.step == steps || r.step % cfg.log_every == 0))
      out << r.to_line() << "\n";
  };
  for (int i = 0; i < steps; ++i) trainer.step();

  std::string ckpt_path = (std::filesystem::path(out_dir) / "model.ckpt").string();
  save_checkpoint(ckpt_path, model, static_cast<uint64_t>(trainer.step_count()),
                  trainer.rng().state());
  out << "wrote " << ckpt_path << " after " << steps << " steps\n";
  return 0;
}

int cmd_gen_pairs(const std::string& corpus_dir, const std::string& teacher_ckpt,
                  const std::string& out_dir_arg, const std::vector<std::string>& sets,
                  const std::vector<std::string>& args, std::ostream& out) {
  RunConfig cfg = config_from_checkpoint(teacher_ckpt, sets);
  Corpus corpus = load_corpus(corpus_dir);
  require_corpus_match(cfg, corpus, "gen-pairs");
  nn::TtsModel<float> model(cfg);
  load_checkpoint_into(teacher_ckpt, model);
  PairSet set = generate_pairs(model, corpus, cfg.pair_seed);
  validate_pairs(set, corpus);
  std::string out_dir = resolve_out(out_dir_arg);
  save_pairs(out_dir, set);
  write_record(out_dir, cfg, args);
  out << "wrote " << set.pairs.size() << " pairs -> " << out_dir << "\n";
  return 0;
}

int cmd_synth(const std::string& ckpt, const std::string& prompt_path, const std::string& text,
              const std::string& durations_str, double noise_scale, uint64_t seed,
              const std::string& out_arg, const std::vector<std::string>& sets,
              const std::vector<std::string>& args, std::ostream& out) {
  RunConfig cfg = config_from_checkpoint(ckpt, sets);
  nn::TtsModel<float> model(cfg);
  load_checkpoint_into(ckpt, model);
  Mel prompt = load_mel(prompt_path);

  nn::SynthOptions<float> opt;
  if (!durations_str.empty()) opt.forced_durations = parse_int_list(durations_str, "--durations");
  opt.noise_scale = noise_scale;
  Rng rng(mix_seed(seed, 0x5D7ull));
  opt.rng = &rng;
  auto res = model.synthesize(parse_int_list(text, "--text"), prompt, opt);

  std::string out_path = resolve_out(out_arg);
  save_mel(out_path, res.mel);
  write_file_atomic(out_path + ".run_record.txt", record_text(cfg, args));
  double audio_s = static_cast<double>(res.mel.num_frames()) * cfg.hop / cfg.sample_rate;
  out << "wrote " << res.mel.num_frames() << " frames (" << fmt_float(audio_s) << " s) -> "
      << out_path << "\n";
  std::ostringstream ds;
  for (size_t i = 0; i < res.durations.size(); ++i) ds << (i ? "," : "") << res.durations[i];
  out << "durations=" << ds.str() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& corpus_dir, const std::string& embedder_name,
             const std::string& transcriber_name, uint64_t seed, const std::string& export_path,
             const std::vector<std::string>& sets, const std::vector<std::string>& args,
             std::ostream& out) {
  RunConfig cfg = config_from_checkpoint(ckpt, sets);
  nn::TtsModel<float> model(cfg);
  load_checkpoint_into(ckpt, model);
  Corpus corpus = load_corpus(corpus_dir);
  require_corpus_match(cfg, corpus, "eval");
  Embedder embed = get_embedder(embedder_name, cfg);
  Transcriber transcribe = get_transcriber(transcriber_name, cfg);
  auto rep = evaluate_zero_shot(model, corpus, embed, transcribe, seed);
  print_record_line(out, cfg);
  out << "sim=" << fmt_float(rep.sim) << " cer=" << fmt_float(rep.cer)
      << " centroid_dist=" << fmt_float(real_synth_centroid_distance(rep.embeddings))
      << " n=" << corpus.utts.size() << "\n";
  if (!export_path.empty()) {
    std::string p = resolve_out(export_path);
    export_embeddings(p, rep.embeddings);
    out << "wrote " << rep.embeddings.size() << " embeddings -> " << p << "\n";
  }
  (void)args;
  return 0;
}

int cmd_sweep_sigma(const std::string& corpus_dir, const std::string& pairs_dir,
                    const std::string& eval_dir, const std::string& sigmas_str, int steps,
                    const std::string& config_path, const std::vector<std::string>& sets,
                    std::ostream& out) {
  RunConfig cfg = resolve_config(config_path, sets);
  Corpus train = load_corpus(corpus_dir);
  adopt_corpus_dims(cfg, train, out);
  validate_config(cfg);
  PairSet pairs = load_pairs(pairs_dir);
  validate_pairs(pairs, train);
  Corpus eval_corpus = load_corpus(eval_dir);
  require_corpus_match(cfg, eval_corpus, "sweep-sigma");
  std::vector<double> sigmas = parse_double_list(sigmas_str, "--sigmas");
  int n_steps = steps > 0 ? steps : cfg.train_steps;
  auto rows = sigma_sweep<float>(cfg, train, pairs, eval_corpus, sigmas, n_steps);
  print_record_line(out, cfg);
  for (const auto& r : rows)
    out << "sigma=" << fmt_float(r.sigma) << " sim=" << fmt_float(r.sim)
        << " cer=" << fmt_float(r.cer) << " centroid_dist=" << fmt_float(r.centroid_dist) << "\n";
  return 0;
}

int cmd_bench_rtf(const std::string& ckpt, const std::string& prompt_path, const std::string& text,
                  int warmup, int repeats, uint64_t seed, const std::vector<std::string>& sets,
                  std::ostream& out) {
  RunConfig cfg = config_from_checkpoint(ckpt, sets);
  nn::TtsModel<float> model(cfg);
  load_checkpoint_into(ckpt, model);
  Mel prompt = load_mel(prompt_path);
  std::vector<int> phonemes = parse_int_list(text, "--text");
  Rng rng(mix_seed(seed, 0xB37ull));
  auto synth_once = [&]() {
    nn::SynthOptions<float> opt;
    opt.rng = &rng;
    return model.synthesize(phonemes, prompt, opt).mel.num_frames();
  };
  RtfResult r = measure_rtf(synth_once, cfg.hop, cfg.sample_rate, warmup, repeats);
  print_record_line(out, cfg);
  out << "rtf=" << fmt_float(r.rtf) << " median_wall_s=" << fmt_float(r.median_wall_s)
      << " audio_s=" << fmt_float(r.audio_s) << " frames=" << r.frames << "\n";
  return 0;
}

int cmd_count_params(const std::string& ckpt, const std::string& config_path,
                     const std::vector<std::string>& sets, std::ostream& out) {
  RunConfig cfg =
      ckpt.empty() ? resolve_config(config_path, sets) : config_from_checkpoint(ckpt, sets);
  nn::TtsModel<float> model(cfg);
  if (!ckpt.empty()) load_checkpoint_into(ckpt, model);

  // Group by the first two dot-separated name segments for a readable audit.
  std::map<std::string, int64_t> groups;
  int64_t frozen = 0;
  for (const auto& [name, e] : model.params.entries()) {
    if (!e.trainable) {
      frozen += e.value.size();
      continue;
    }
    size_t first = name.find('.');
    size_t second = first == std::string::npos ? std::string::npos : name.find('.', first + 1);
    groups[second == std::string::npos ? name : name.substr(0, second)] += e.value.size();
  }
  print_record_line(out, cfg);
  for (const auto& [g, n] : groups) out << "group " << g << " " << n << "\n";
  out << "generator_trainable=" << model.params.param_count() << "\n";
  out << "generator_frozen=" << frozen << "\n";
  out << "discriminator_trainable=" << model.disc_params.param_count() << "\n";
  out << "params=" << model.params.param_count() << "\n";
  return 0;
}

std::string single_line(std::string msg) {
  for (size_t i = 0; i < msg.size(); ++i)
    if (msg[i] == '\n') msg.replace(i, 1, "; ");
  return msg;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"lightweight zero-shot TTS trainer and toolbox"};
  app.name("sdtts");
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  int rc = 0;
  std::string config_path, corpus_dir, pairs_dir, eval_dir, out_path, ckpt_path, prompt_path;
  std::string text, durations_str, export_path, embedder_name = "stat",
                                                transcriber_name = "synthetic";
  std::string sigmas_str = "0,0.5,0.8,1";
  std::vector<std::string> sets;
  int steps = 0, warmup = 1, repeats = 5;
  double noise_scale = -1.0;
  uint64_t seed = 42;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "config file (key = value lines)");
    sub->add_option("--set", sets, "override a config key, e.g. --set sigma=0.5");
  };

  auto* mc = app.add_subcommand("make-corpus", "render a synthetic multi-speaker corpus");
  add_config(mc);
  mc->add_option("--out", out_path, "output corpus directory")->required();
  mc->callback([&] { rc = cmd_make_corpus(out_path, config_path, sets, args, out); });

  auto* tt = app.add_subcommand("train-teacher", "train the teacher on ground-truth mels");
  add_config(tt);
  tt->add_option("--corpus", corpus_dir, "training corpus directory")->required();
  tt->add_option("--out", out_path, "run directory (checkpoint + log)")->required();
  tt->add_option("--steps", steps, "training steps (default: config train_steps)");
  tt->callback([&] {
    rc = cmd_train(false, corpus_dir, "", out_path, config_path, sets, steps, args, out);
  });

  auto* gp = app.add_subcommand("gen-pairs", "render parallel pairs with a trained teacher");
  gp->add_option("--corpus", corpus_dir, "training corpus directory")->required();
  gp->add_option("--teacher", ckpt_path, "teacher checkpoint")->required();
  gp->add_option("--out", out_path, "output pair-set directory")->required();
  gp->add_option("--set", sets, "override a config key (e.g. pair_seed)");
  gp->callback([&] { rc = cmd_gen_pairs(corpus_dir, ckpt_path, out_path, sets, args, out); });

  auto* ts = app.add_subcommand("train-student", "train a student with sigma-mixed pair data");
  add_config(ts);
  ts->add_option("--corpus", corpus_dir, "training corpus directory")->required();
  ts->add_option("--pairs", pairs_dir, "pair-set directory from gen-pairs")->required();
  ts->add_option("--out", out_path, "run directory (checkpoint + log)")->required();
  ts->add_option("--steps", steps, "training steps (default: config train_steps)");
  ts->callback([&] {
    rc = cmd_train(true, corpus_dir, pairs_dir, out_path, config_path, sets, steps, args, out);
  });

  auto* sy = app.add_subcommand("synth", "synthesize a mel from phonemes and a prompt");
  sy->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  sy->add_option("--prompt", prompt_path, "prompt mel file")->required();
  sy->add_option("--text", text, "phoneme ids, e.g. \"3,1,4\"")->required();
  sy->add_option("--out", out_path, "output mel file")->required();
  sy->add_option("--durations", durations_str, "forced per-phoneme frame counts, e.g. \"2,3,1\"");
  sy->add_option("--noise-scale", noise_scale, "latent noise scale (default: config value)");
  sy->add_option("--seed", seed, "sampling seed");
  sy->add_option("--set", sets, "override a config key");
  sy->callback([&] {
    rc = cmd_synth(ckpt_path, prompt_path, text, durations_str, noise_scale, seed, out_path, sets,
                   args, out);
  });

  auto* ev = app.add_subcommand("eval", "zero-shot similarity and error rate on a corpus");
  ev->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  ev->add_option("--corpus", corpus_dir, "evaluation corpus directory")->required();
  ev->add_option("--embedder", embedder_name, "speaker embedder name");
  ev->add_option("--transcriber", transcriber_name, "transcriber name");
  ev->add_option("--seed", seed, "synthesis sampling seed");
  ev->add_option("--export-embeddings", export_path, "write real/synth embedding rows here");
  ev->add_option("--set", sets, "override a config key");
  ev->callback([&] {
    rc = cmd_eval(ckpt_path, corpus_dir, embedder_name, transcriber_name, seed, export_path, sets,
                  args, out);
  });

  auto* sw = app.add_subcommand("sweep-sigma", "train one student per sigma and score each");
  add_config(sw);
  sw->add_option("--corpus", corpus_dir, "training corpus directory")->required();
  sw->add_option("--pairs", pairs_dir, "pair-set directory")->required();
  sw->add_option("--eval-corpus", eval_dir, "held-out corpus directory")->required();
  sw->add_option("--sigmas", sigmas_str, "comma-separated sigma values");
  sw->add_option("--steps", steps, "training steps per student (default: config train_steps)");
  sw->callback([&] {
    rc = cmd_sweep_sigma(corpus_dir, pairs_dir, eval_dir, sigmas_str, steps, config_path, sets, out);
  });

  auto* br = app.add_subcommand("bench-rtf", "measure the real-time factor of synthesis");
  br->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  br->add_option("--prompt", prompt_path, "prompt mel file")->required();
  br->add_option("--text", text, "phoneme ids")->required();
  br->add_option("--warmup", warmup, "untimed warmup runs");
  br->add_option("--repeats", repeats, "timed runs (median reported)");
  br->add_option("--seed", seed, "sampling seed");
  br->add_option("--set", sets, "override a config key");
  br->callback([&] {
    rc = cmd_bench_rtf(ckpt_path, prompt_path, text, warmup, repeats, seed, sets, out);
  });

  auto* cp = app.add_subcommand("count-params", "trainable parameter counts by module");
  add_config(cp);
  cp->add_option("--ckpt", ckpt_path, "count a checkpointed model instead of a fresh config");
  cp->callback([&] { rc = cmd_count_params(ckpt_path, config_path, sets, out); });

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
    return rc;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << single_line(e.what()) << "\n";
    return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
  } catch (const std::exception& e) {
    err << "error: " << single_line(e.what()) << "\n";
    return 1;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace sdtts
