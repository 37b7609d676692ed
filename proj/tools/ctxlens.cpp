// ctxlens: context-length probes, long-context detection and boosted decoding
// from the command line. See README.md for usage and the config-file grammar.

#include "ctxlens/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <iostream>
#include <string>

namespace {

using namespace ctxlens;
using namespace ctxlens::cli;

void add_input(CLI::App* sub, SequenceInput& in) {
  sub->add_option("--samples", in.samples, "JSON-lines samples file");
  sub->add_option("--corpus", in.corpus, "JSON-lines corpus {id,text} to cut into buckets");
  sub->add_option("--n-per-bucket", in.n_per_bucket, "Samples per length bucket (corpus input)");
  sub->add_option("--bucket-offset", in.offset, "Offset added to bucket bounds, e.g. 6000 for long documents");
  sub->add_option("--token-cache", in.token_cache, "Directory for cached document tokenizations");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctxlens: how much context does a language model use?"};
  app.set_config("--config", "", "Read options from a key = value config file");
  app.require_subcommand(1);

  RunConfig cfg;
  std::string gamma = "0.1225";
  std::string epsilons;
  double lambda = 0.0;
  double short_frac = 0.0;

  app.add_option("--backend", cfg.backend,
                 "mock:..., http://HOST:PORT[#opts] or openai:URL#vocab=N (default: $CTXLENS_BACKEND_URL)");
  app.add_option("--strategy", cfg.strategy, "greedy | topk:K | nucleus:P | adaptive:EPS")->capture_default_str();
  app.add_option("--grid", cfg.grid, "short | long | fixed50 | percentile[:list] | fixed:START:STEP")
      ->capture_default_str();
  app.add_option("--seed", cfg.seed, "Top-level random seed")->capture_default_str();
  app.add_option("--out", cfg.out, "Output directory")->capture_default_str();
  app.add_option("--parallel", cfg.parallel, "Worker threads (0: backend limit)")->capture_default_str();
  app.add_option("--cache", cfg.cache_capacity, "Oracle LRU cache entries")->capture_default_str();
  app.add_option("--delta", cfg.delta, "MCL confidence gap")->capture_default_str();
  auto* eps_opt = app.add_option("--epsilons", epsilons, "DaMCL thresholds, comma separated (default 0.1,0.2)");
  app.add_option("--tau", cfg.tau, "LSDS classification threshold")->capture_default_str();
  app.add_option("--gamma", gamma, "LSDS gate for boosting; 'inf' disables boosting")->capture_default_str();
  auto* lambda_opt = app.add_option("--lambda", lambda, "Boost factor (required for taboo)");
  app.add_option("--alpha", cfg.alpha, "CAD contrast strength")->capture_default_str();
  app.add_option("--boost-epsilon", cfg.boost_epsilon, "LSPS threshold for boosting")->capture_default_str();
  app.add_option("--short-len", cfg.short_len, "Short context length in tokens")->capture_default_str();
  auto* frac_opt = app.add_option("--short-frac", short_frac, "Short context as a fraction of |s|");
  app.add_flag("--masking", cfg.masking, "Truncate by attention masking instead of dropping tokens");

  MclOptions mcl_opt;
  auto* mcl = app.add_subcommand("mcl", "Minimal context length of confident-correct predictions");
  add_input(mcl, mcl_opt.input);
  mcl->add_flag("!--no-filter", mcl_opt.filter, "Probe every sample, not only confident-correct ones");

  DamclOptions damcl_opt;
  auto* damcl = app.add_subcommand("damcl", "Distribution-aware minimal context length sweep");
  add_input(damcl, damcl_opt.input);
  damcl->add_option("--strategies", damcl_opt.strategies, "Strategies to sweep")->delimiter(',');
  damcl->add_option("--metric", damcl_opt.metric, "jsd | tvd | kl | one_minus_f1")->capture_default_str();

  DetectOptions detect_opt;
  auto* detect = app.add_subcommand("detect", "LSDS long-context detection against an oracle");
  add_input(detect, detect_opt.input);
  detect->add_option("--oracle", detect_opt.oracle, "mcl | lsd_lcl | planted")->capture_default_str();
  detect->add_option("--tau-sweep", detect_opt.tau_sweep, "Thresholds for the sweep table")->delimiter(',');

  GenerateOptions gen_opt;
  auto* gen = app.add_subcommand("generate", "Sample continuations with vanilla, cad or taboo decoding");
  gen->add_option("--prompts", gen_opt.prompts, "JSON-lines {id, prompt|tokens, gold?}")->required();
  gen->add_option("--gold", gen_opt.gold, "JSON-lines {id, gold} answers to score against");
  gen->add_option("--n-samples", gen_opt.n_samples, "Generations per prompt")->capture_default_str();
  gen->add_option("--max-new", gen_opt.max_new, "Tokens per generation")->capture_default_str();
  gen->add_option("--method", gen_opt.method, "vanilla | cad | taboo")->capture_default_str();

  BenchOptions bench_opt;
  std::string lengths;
  auto* bench = app.add_subcommand("bench", "Overhead of the extra short-context call");
  auto* lengths_opt =
      bench->add_option("--lengths", lengths, "Context lengths, comma separated (default 256,512,1024,2048)");
  bench->add_option("--repeats", bench_opt.repeats, "Timed repetitions per length")->capture_default_str();

  ScoreOptions score_opt;
  auto* score = app.add_subcommand("score", "F1 / BLEU / ROUGE-L over JSON-lines {pred, gold}");
  score->add_option("--input", score_opt.input, "Rows to score")->required();

  SynthOptions synth_opt;
  std::string mix;
  auto* synth = app.add_subcommand("synth", "Generate labelled synthetic probes");
  synth->add_option("--kind", synth_opt.kind, "kv | niah | longeval")->capture_default_str();
  synth->add_option("--mix", mix, "distance:count list, e.g. 10:80,100:20")->required();
  synth->add_option("--length", synth_opt.length, "Sequence (kv) or haystack (niah) length")->capture_default_str();
  synth->add_option("--lines", synth_opt.lines, "Register lines (longeval)")->capture_default_str();
  synth->add_option("--window", synth_opt.window, "Short-context window")->capture_default_str();
  synth->add_option("--vocab", synth_opt.vocab, "Vocabulary size (kv)")->capture_default_str();
  synth->add_option("--answer", synth_opt.answer, "content | line_id (longeval)")->capture_default_str();
  synth->add_option("--filler", synth_opt.filler, "Plain-text filler (niah)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  return run_guarded([&]() -> int {
    cfg.gamma = parse_real(gamma, "--gamma");
    if (eps_opt->count()) {
      cfg.epsilons.clear();
      for (const auto& e : split_list(epsilons)) cfg.epsilons.push_back(parse_real(e, "--epsilons"));
    }
    if (lambda_opt->count()) cfg.lambda = lambda;
    if (frac_opt->count()) cfg.short_frac = short_frac;

    if (*mcl) return cmd_mcl(cfg, mcl_opt);
    if (*damcl) return cmd_damcl(cfg, damcl_opt);
    if (*detect) return cmd_detect(cfg, detect_opt);
    if (*gen) return cmd_generate(cfg, gen_opt);
    if (*bench) {
      if (lengths_opt->count()) {
        bench_opt.lengths.clear();
        for (const auto& l : split_list(lengths)) {
          const double v = parse_real(l, "--lengths");
          if (!(v >= 1.0) || v != std::floor(v)) throw ConfigError("bench lengths must be positive integers");
          bench_opt.lengths.push_back(static_cast<std::size_t>(v));
        }
      }
      return cmd_bench(cfg, bench_opt);
    }
    if (*score) return cmd_score(cfg, score_opt);
    if (*synth) {
      synth_opt.mix = parse_mix(mix);
      return cmd_synth(cfg, synth_opt);
    }
    return static_cast<int>(ExitCode::usage);
  });
}
