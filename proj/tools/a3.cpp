// a3: train, sample, infill, eval, masks, verify.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "a3/decode.hpp"
#include "a3/error.hpp"
#include "a3/eval.hpp"
#include "a3/io.hpp"
#include "a3/masking.hpp"
#include "a3/train.hpp"
#include "a3/verify.hpp"

namespace fs = std::filesystem;

namespace {

struct DecodeFlags {
  std::string strategy = "groupwise";
  std::string criterion = "confidence";
  std::string context = "ordered";
  std::size_t group_size = 1;
  double temperature = 1.5;
  double top_p = 0.95;
  bool greedy = false;
  std::size_t max_new = 32;
  std::uint64_t seed = 0;
  std::string trace = "trace.csv";

  void add_to(CLI::App* cmd, bool with_max_new) {
    cmd->add_option("--strategy", strategy, "groupwise or dynamic")
        ->check(CLI::IsMember({"groupwise", "dynamic"}))
        ->capture_default_str();
    cmd->add_option("--group-size", group_size, "tokens per group / per commit")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--criterion", criterion, "dynamic commit criterion")
        ->check(CLI::IsMember({"confidence", "entropy", "random", "ordered"}))
        ->capture_default_str();
    cmd->add_option("--context", context, "grouping of known tokens: ordered or merged")
        ->check(CLI::IsMember({"ordered", "merged"}))
        ->capture_default_str();
    cmd->add_option("--temperature", temperature)->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--top-p", top_p)->check(CLI::Range(0.0, 1.0))->capture_default_str();
    cmd->add_flag("--greedy", greedy, "argmax instead of sampling");
    if (with_max_new) {
      cmd->add_option("--max-new", max_new, "tokens to generate")
          ->check(CLI::PositiveNumber)
          ->capture_default_str();
    }
    cmd->add_option("--seed", seed)->capture_default_str();
    cmd->add_option("--trace", trace, "commit trace CSV path (empty: do not write)")
        ->capture_default_str();
  }

  a3::DecodeConfig config() const {
    a3::DecodeConfig c;
    c.strategy = a3::parse_strategy(strategy);
    c.criterion = a3::parse_criterion(criterion);
    c.context = a3::parse_context_mode(context);
    c.group_size = group_size;
    c.temperature = temperature;
    c.top_p = top_p;
    c.greedy = greedy;
    c.max_new = max_new;
    c.seed = seed;
    return c;
  }
};

void write_trace(const DecodeFlags& f, const a3::DecodeResult& res) {
  if (f.trace.empty()) return;
  std::ofstream out(f.trace);
  if (!out) throw a3::Error("cannot write trace " + f.trace);
  a3::write_trace_csv(out, res, a3::parse_criterion(f.criterion));
}

int cmd_train(const std::string& config_path, bool quiet) {
  const auto tc = a3::load_train_config(config_path);
  const std::string text = a3::read_file(tc.data_path);
  const auto tok = tc.tokenizer == "chars" ? a3::Tokenizer::chars(text) : a3::Tokenizer::bytes();
  a3::ModelConfig mc = tc.model;
  mc.vocab_size = tok.vocab_size();
  mc.bos_id = tok.bos_id();
  mc.pad_id = tok.bos_id();
  mc.validate();
  tc.plan.validate(mc);
  const auto corpus = a3::pack_corpus(tok, text, static_cast<std::size_t>(tc.plan.seq_len));
  if (corpus.empty()) {
    throw a3::ValidationError("corpus is shorter than one sequence of seq_len tokens");
  }
  fs::create_directories(tc.out_dir);

  std::cout << "corpus: " << corpus.size() << " sequences of " << tc.plan.seq_len << " tokens\n";
  for (const auto& ph : a3::schedule(tc.plan, corpus.size() * static_cast<std::size_t>(tc.plan.seq_len))) {
    std::cout << "  " << ph.describe() << '\n';
  }

  auto sink = [&](const a3::Params<float>& p, const a3::TrainEvent& ev) {
    a3::Checkpoint ck{mc, tok, p, tc.plan.seed, ev.step, ev.rng_state};
    const fs::path path = tc.out_dir / (ev.kind == a3::TrainEvent::Kind::final
                                            ? std::string("final.a3ck")
                                            : "stage" + std::to_string(ev.stage) + ".a3ck");
    a3::save_checkpoint(path, ck);
    std::cout << "wrote " << path.string() << " (step " << ev.step << ")\n";
  };
  const auto res = a3::train_run(mc, tc.plan, corpus, sink, quiet ? nullptr : &std::cout);
  std::ofstream csv(tc.out_dir / "loss.csv");
  a3::write_loss_csv(csv, res.log);
  std::cout << "wrote " << (tc.out_dir / "loss.csv").string() << '\n';
  return 0;
}

int cmd_sample(const std::string& ckpt_path, const std::string& prompt, const DecodeFlags& f) {
  const auto ck = a3::load_checkpoint(ckpt_path);
  const auto ids = ck.tokenizer.encode(prompt);
  const auto res = a3::generate(ck.params, ids, f.config());
  std::cout << ck.tokenizer.decode_lossy(res.tokens) << '\n';
  std::cerr << "forward passes: " << res.forward_passes
            << ", evaluated positions: " << res.evaluated_positions << '\n';
  write_trace(f, res);
  return 0;
}

int cmd_infill(const std::string& ckpt_path, const std::string& left, const std::string& right,
               std::size_t blanks, const DecodeFlags& f) {
  const auto ck = a3::load_checkpoint(ckpt_path);
  const auto l = ck.tokenizer.encode(left);
  const auto r = ck.tokenizer.encode(right);
  const auto res = a3::infill(ck.params, l, blanks, r, f.config());
  if (!res.warning.empty()) std::cerr << "warning: " << res.warning << '\n';
  std::cout << ck.tokenizer.decode_lossy(res.tokens) << '\n';
  write_trace(f, res);
  return 0;
}

std::vector<std::size_t> parse_lengths(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    const auto v = std::stoul(item, &pos);
    if (pos != item.size()) throw CLI::ValidationError("--lengths", "bad length '" + item + "'");
    out.push_back(v);
  }
  return out;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& lengths,
             std::size_t windows, std::size_t group_size, bool permuted, std::uint64_t seed) {
  const auto ck = a3::load_checkpoint(ckpt_path);
  const auto tokens = ck.tokenizer.encode(a3::read_file(data_path));
  const auto seq_len = static_cast<std::size_t>(ck.config.max_tokens());
  const auto seqs = a3::pack_corpus(tokens, std::min(seq_len, tokens.size()));
  a3::Rng rng(seed);
  double nll = 0;
  std::size_t used = 0;
  for (; used < std::min(windows, seqs.size()); ++used) {
    const auto n = seqs[used].size();
    const auto g = permuted ? a3::make_permuted(n, group_size, rng)
                            : (group_size == 1 ? a3::make_singleton(n) : a3::make_fixed(n, group_size));
    const auto rep = a3::sequence_nll(ck.params, seqs[used], g);
    nll += rep.nll;
  }
  nll /= static_cast<double>(used);
  std::cout << "windows: " << used << " x " << seqs.front().size() << " tokens\n"
            << "grouping: " << (permuted ? "permuted" : "contiguous") << ", group size " << group_size
            << '\n'
            << "nll (nats/token): " << nll << '\n'
            << "perplexity: " << std::exp(nll) << '\n';
  if (!lengths.empty()) {
    const auto rows = a3::length_sweep(ck.params, tokens, parse_lengths(lengths));
    a3::write_length_csv(std::cout, rows);
    std::cout << "relative spread: " << a3::relative_spread(rows) << '\n';
  }
  return 0;
}

int cmd_masks(const std::string& path, bool bos) {
  const auto g = a3::parse_grouping(a3::read_file(path));
  a3::require_valid(g, g.num_positions());
  const auto mp = a3::make_mask_pair(g, bos);
  std::cout << "content stream (row attends to column, '#' = allowed):\n"
            << a3::render(mp.content) << "\nquery stream:\n"
            << a3::render(mp.query);
  return 0;
}

int cmd_verify(const std::string& ckpt_path, std::size_t cases, std::uint64_t seed) {
  a3::Rng rng(seed);
  a3::Params<float> params;
  std::size_t mass_n = 5;
  if (ckpt_path.empty()) {
    a3::ModelConfig tiny{4, 8, 2, 2, 13, 0, 0};
    params = a3::randomized(a3::init_params(tiny, rng), rng);
  } else {
    params = a3::load_checkpoint(ckpt_path).params;
    // Largest n <= 5 whose enumeration stays within 1e5 sequences.
    const double v = params.config().vocab_size;
    while (mass_n > 1 && std::pow(v, static_cast<double>(mass_n)) > 1e5) --mass_n;
  }
  const auto pd = a3::params_cast<double>(params);
  std::vector<a3::Grouping> groupings = {a3::make_singleton(mass_n),
                                         a3::Grouping({[&] {
                                           std::vector<int> all(mass_n);
                                           for (std::size_t i = 0; i < mass_n; ++i) all[i] = static_cast<int>(i);
                                           return all;
                                         }()}),
                                         a3::make_random_grouping(mass_n, rng)};
  if (mass_n == 5) groupings.push_back(a3::Grouping({{0, 1, 2}, {4}, {3}}));

  const a3::SuiteResult results[] = {
      a3::verify_masks(cases, 12, rng),
      a3::verify_leakage(params, cases, 12, 1e-5, rng),
      a3::verify_normalization(pd, groupings, mass_n, 1e-4),
      a3::verify_gradients(pd, std::min<std::size_t>(6, static_cast<std::size_t>(params.config().max_tokens())),
                           ckpt_path.empty() ? 500 : 200, 1e-3, 0.99, rng),
  };
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Any-order any-subset autoregressive models: training, decoding, evaluation"};
  app.require_subcommand(1, 1);

  std::string config, ckpt, prompt, left, right, data, lengths, grouping;
  bool quiet = false, bos = false, small = false;
  std::size_t blanks = 1, windows = 16, group_size = 1, cases = 200;
  bool permuted = false;
  std::uint64_t seed = 0;
  DecodeFlags sample_flags, infill_flags;
  infill_flags.strategy = "dynamic";

  auto* train = app.add_subcommand("train", "run the three-stage curriculum from a JSON config");
  train->add_option("--config", config, "training config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_flag("--quiet", quiet, "only report checkpoints");

  auto* sample = app.add_subcommand("sample", "generate a continuation of a prompt");
  sample->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  sample->add_option("--prompt", prompt, "prompt text (may be empty)");
  sample_flags.add_to(sample, true);

  auto* inf = app.add_subcommand("infill", "fill blanks between a left and right context");
  inf->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  inf->add_option("--left", left);
  inf->add_option("--right", right);
  inf->add_option("--blanks", blanks, "number of tokens to fill")->required()->check(CLI::PositiveNumber);
  infill_flags.add_to(inf, false);

  auto* ev = app.add_subcommand("eval", "negative log-likelihood and context-length sweep");
  ev->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data)->required()->check(CLI::ExistingFile);
  ev->add_option("--lengths", lengths, "comma-separated lengths for the sweep, e.g. 64,128,256");
  ev->add_option("--windows", windows, "number of full-context windows to score")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  ev->add_option("--group-size", group_size)->check(CLI::PositiveNumber)->capture_default_str();
  ev->add_flag("--permuted", permuted, "permute positions before grouping");
  ev->add_option("--seed", seed)->capture_default_str();

  auto* masks = app.add_subcommand("masks", "render the content and query masks of a grouping");
  masks->add_option("--grouping", grouping, "grouping file: one group per line")
      ->required()
      ->check(CLI::ExistingFile);
  masks->add_flag("--bos", bos, "include the BOS row/column");

  auto* verify = app.add_subcommand("verify", "run the built-in correctness suites");
  verify->add_option("--ckpt", ckpt)->check(CLI::ExistingFile);
  verify->add_flag("--small", small, "use a fresh tiny model (default without --ckpt)");
  verify->add_option("--cases", cases)->check(CLI::PositiveNumber)->capture_default_str();
  verify->add_option("--seed", seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return cmd_train(config, quiet);
    if (*sample) return cmd_sample(ckpt, prompt, sample_flags);
    if (*inf) return cmd_infill(ckpt, left, right, blanks, infill_flags);
    if (*ev) return cmd_eval(ckpt, data, lengths, windows, group_size, permuted, seed);
    if (*masks) return cmd_masks(grouping, bos);
    if (*verify) return cmd_verify(small ? std::string() : ckpt, cases, seed);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
