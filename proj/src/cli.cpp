// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mogu/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mogu/corpus.hpp"
#include "mogu/errors.hpp"
#include "mogu/eval.hpp"
#include "mogu/inference.hpp"
#include "mogu/model.hpp"
#include "mogu/training.hpp"

namespace mogu {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Flags that override individual config keys. Unset flags leave the value
// from the defaults, the config file and --set untouched.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> d_model, layers, heads, d_ff, d_router, lora_r, m, epochs, batch_size, max_new_tokens;
  std::optional<double> lambda, lr_responder, lr_router;
  std::optional<std::string> ablation;
  std::optional<int> n_benign, n_malicious, n_eval;
};

struct Globals {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out_dir;
  Overrides ov;
};

void add_model_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--seed", ov.seed, "Seed for corpus, initialization, shuffling and sampling");
  cmd->add_option("--d-model", ov.d_model, "Hidden width");
  cmd->add_option("--layers", ov.layers, "Number of transformer layers");
  cmd->add_option("--heads", ov.heads, "Attention heads");
  cmd->add_option("--d-ff", ov.d_ff, "Feed-forward width");
  cmd->add_option("--d-router", ov.d_router, "Router bottleneck width");
  cmd->add_option("--lora-r", ov.lora_r, "Adapter rank");
  cmd->add_option("--lambda", ov.lambda, "Weight of the router L1 term");
  cmd->add_option("--m", ov.m, "Generated tokens decoded in mixed mode");
}

void add_train_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--epochs", ov.epochs, "Epochs per phase");
  cmd->add_option("--batch-size", ov.batch_size, "Minibatch size");
  cmd->add_option("--lr-responder", ov.lr_responder, "Learning rate of the two responders and SFT");
  cmd->add_option("--lr-router", ov.lr_router, "Learning rate of the routers");
  cmd->add_option("--ablation", ov.ablation, "none | no-cl | no-l1");
}

void add_corpus_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--n-benign", ov.n_benign, "Benign training instructions");
  cmd->add_option("--n-malicious", ov.n_malicious, "Malicious training instructions");
  cmd->add_option("--n-eval", ov.n_eval, "Held-out instructions per label");
}

void apply(const Overrides& ov, RunConfig& c) {
  if (ov.seed) c.model.seed = c.train.seed = c.corpus.seed = c.decode.seed = *ov.seed;
  if (ov.d_model) c.model.d_model = *ov.d_model;
  if (ov.layers) c.model.n_layers = *ov.layers;
  if (ov.heads) c.model.n_heads = *ov.heads;
  if (ov.d_ff) c.model.d_ff = *ov.d_ff;
  if (ov.d_router) c.model.d_router = *ov.d_router;
  if (ov.lora_r) c.model.d_lora_r = *ov.lora_r;
  if (ov.lambda) c.model.lambda_l1 = *ov.lambda;
  if (ov.m) c.model.m_tokens = *ov.m;
  if (ov.epochs) c.train.max_epochs = *ov.epochs;
  if (ov.batch_size) c.train.batch_size = *ov.batch_size;
  if (ov.lr_responder) c.train.lr_responder = *ov.lr_responder;
  if (ov.lr_router) c.train.lr_router = *ov.lr_router;
  if (ov.ablation) c.train.ablation = parse_ablation(*ov.ablation);
  if (ov.n_benign) c.corpus.n_benign = *ov.n_benign;
  if (ov.n_malicious) c.corpus.n_malicious = *ov.n_malicious;
  if (ov.n_eval) c.corpus.n_eval = *ov.n_eval;
  if (ov.max_new_tokens) c.decode.max_new_tokens = *ov.max_new_tokens;
}

RunConfig resolve_config(const Globals& g) {
  RunConfig c = g.config_file.empty() ? RunConfig{} : RunConfig::load(g.config_file);
  for (const auto& kv : g.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InputError("--set expects KEY=VALUE, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  apply(g.ov, c);
  c.validate();
  return c;
}

fs::path output_root(const Globals& g) {
  if (!g.out_dir.empty()) return g.out_dir;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return "runs";
}

// Everything a subcommand needs once flags are resolved.
struct Context {
  RunConfig config;
  fs::path run_dir;
  std::ostream& out;
  std::ostream& err;
  std::string corpus_hash = "-";

  fs::path ensure_run_dir() const {
    std::error_code ec;
    fs::create_directories(run_dir, ec);
    if (ec) throw IoError("cannot create " + run_dir.string() + ": " + ec.message());
    return run_dir;
  }

  void repro() const {
    err << "repro seed=" << config.train.seed << " model_seed=" << config.model.seed
        << " corpus_seed=" << config.corpus.seed << " config=" << config.hash() << " corpus=" << corpus_hash
        << '\n';
  }
};

struct CorpusFiles {
  fs::path train, eval;
};

// Loads the train/eval split named on the command line, or the one in the
// run directory, generating it from the corpus config when absent.
Corpus obtain_corpus(Context& ctx, const std::string& train_flag, const std::string& eval_flag) {
  CorpusFiles files{ctx.run_dir / "train.jsonl", ctx.run_dir / "eval.jsonl"};
  if (!train_flag.empty()) files.train = train_flag;
  if (!eval_flag.empty()) files.eval = eval_flag;
  const bool have_train = fs::exists(files.train);
  const bool have_eval = fs::exists(files.eval);
  if (!train_flag.empty() && !have_train) throw IoError("corpus file not found: " + files.train.string());
  if (!eval_flag.empty() && !have_eval) throw IoError("eval file not found: " + files.eval.string());
  Corpus corpus;
  if (!have_train || !have_eval) {
    const auto& cc = ctx.config.corpus;
    auto fresh = gen_corpus(cc.seed, cc.n_benign, cc.n_malicious, cc.n_eval);
    ctx.ensure_run_dir();
    if (!have_train) write_pairs(files.train, fresh.train);
    if (!have_eval) write_instructions(files.eval, fresh.eval);
  }
  corpus.train = read_pairs(files.train);
  corpus.eval = read_instructions(files.eval);
  ctx.corpus_hash = file_git_hash(files.train);
  return corpus;
}

MoguModel load_model(const Context& ctx, const std::string& flag, const fs::path& fallback, bool allow_fresh) {
  if (!flag.empty()) return load_checkpoint(flag).model;
  if (fs::exists(fallback)) return load_checkpoint(fallback).model;
  if (allow_fresh) {
    ctx.err << "note: " << fallback.string() << " not found, using a freshly initialized model\n";
    return init_model(ctx.config.model);
  }
  throw IoError("no checkpoint at " + fallback.string() + "; train first or pass --checkpoint");
}

fs::path default_checkpoint(const Context& ctx, Mode mode) {
  return ctx.run_dir / (mode == Mode::Sft ? "sft.ckpt" : "router.ckpt");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

struct GroupMeans {
  double glad = 0.0, unwill = 0.0;
  std::size_t n = 0;
};

std::string weight_summary(std::span<const WeightRow> rows) {
  GroupMeans g[3];
  for (const auto& r : rows) {
    auto& m = g[r.label == Label::Benign ? 0 : (r.wrapped ? 2 : 1)];
    m.glad += r.mean_w_glad;
    m.unwill += r.mean_w_unwill;
    ++m.n;
  }
  std::ostringstream os;
  os << std::left << std::setw(20) << "condition" << std::right << std::setw(6) << "n" << std::setw(14)
     << "mean_w_glad" << std::setw(14) << "mean_w_unwill" << '\n';
  const char* names[3] = {"benign", "malicious", "wrapped-malicious"};
  for (int i = 0; i < 3; ++i) {
    if (g[i].n == 0) continue;
    const double n = static_cast<double>(g[i].n);
    os << std::left << std::setw(20) << names[i] << std::right << std::setw(6) << g[i].n << std::setw(14)
       << fixed(g[i].glad / n, 4) << std::setw(14) << fixed(g[i].unwill / n, 4) << '\n';
  }
  return os.str();
}

// Trains glad, unwill and router phases from a fresh model, writing one
// checkpoint per phase and the run log into `dir`.
MoguModel train_all(const RunConfig& config, const Corpus& corpus, const fs::path& dir, std::ostream& out) {
  fs::create_directories(dir);
  std::ofstream log_file(dir / "train-log.jsonl", std::ios::trunc);
  if (!log_file) throw IoError("cannot write " + (dir / "train-log.jsonl").string());
  RunLog log(&log_file);
  auto model = init_model(config.model);
  const struct {
    const char* name;
    std::function<PhaseResult()> run;
  } phases[] = {
      {"glad", [&] { return train_responder(model, corpus.train, AdapterKind::Glad, config.train, &log); }},
      {"unwill", [&] { return train_responder(model, corpus.train, AdapterKind::Unwill, config.train, &log); }},
      {"router", [&] { return train_router(model, corpus.train, config.train, &log); }},
  };
  for (const auto& p : phases) {
    const auto res = p.run();
    for (const auto& w : res.warnings) out << "warning: " << w << '\n';
    out << p.name << ": " << res.epoch_losses.size() << " epochs, loss " << fixed(res.epoch_losses.front(), 6)
        << " -> " << fixed(res.epoch_losses.back(), 6) << '\n';
    save_checkpoint(dir / (std::string(p.name) + ".ckpt"), model, config.train, p.name);
  }
  return model;
}

// ---- subcommands ------------------------------------------------------------------

int cmd_gen_data(Context& ctx) {
  ctx.ensure_run_dir();
  const auto& cc = ctx.config.corpus;
  const auto corpus = gen_corpus(cc.seed, cc.n_benign, cc.n_malicious, cc.n_eval);
  const auto train = ctx.run_dir / "train.jsonl";
  const auto eval = ctx.run_dir / "eval.jsonl";
  write_pairs(train, corpus.train);
  write_instructions(eval, corpus.eval);
  ctx.corpus_hash = file_git_hash(train);
  ctx.repro();
  ctx.out << "train " << train.string() << " (" << corpus.train.size() << " pairs)\n";
  ctx.out << "eval  " << eval.string() << " (" << corpus.eval.size() << " instructions)\n";
  ctx.out << "corpus_hash " << ctx.corpus_hash << '\n';
  return kExitOk;
}

struct TrainArgs {
  std::string phase;
  std::string from, corpus, eval;
};

int cmd_train(Context& ctx, const TrainArgs& a) {
  auto corpus = obtain_corpus(ctx, a.corpus, a.eval);
  ctx.repro();
  ctx.ensure_run_dir();
  const auto& cfg = ctx.config;
  MoguModel model = [&] {
    if (a.phase == "glad" || a.phase == "sft") {
      return a.from.empty() ? init_model(cfg.model) : load_checkpoint(a.from).model;
    }
    if (a.phase == "unwill") return load_model(ctx, a.from, ctx.run_dir / "glad.ckpt", true);
    return load_model(ctx, a.from, ctx.run_dir / "unwill.ckpt", false);
  }();
  std::ofstream log_file(ctx.run_dir / ("train-" + a.phase + ".jsonl"), std::ios::trunc);
  if (!log_file) throw IoError("cannot write the run log in " + ctx.run_dir.string());
  RunLog log(&log_file);
  PhaseResult res;
  if (a.phase == "glad") {
    res = train_responder(model, corpus.train, AdapterKind::Glad, cfg.train, &log);
  } else if (a.phase == "unwill") {
    res = train_responder(model, corpus.train, AdapterKind::Unwill, cfg.train, &log);
  } else if (a.phase == "router") {
    res = train_router(model, corpus.train, cfg.train, &log);
  } else {
    res = train_sft_baseline(model, corpus.train, cfg.train, &log);
  }
  for (const auto& w : res.warnings) ctx.err << "warning: " << w << '\n';
  const auto path = ctx.run_dir / (a.phase + ".ckpt");
  save_checkpoint(path, model, cfg.train, a.phase);
  for (std::size_t e = 0; e < res.epoch_losses.size(); ++e) {
    ctx.out << a.phase << " epoch " << e + 1 << " loss " << fixed(res.epoch_losses[e], 8) << '\n';
  }
  ctx.out << "checkpoint " << path.string() << '\n';
  return kExitOk;
}

struct InferArgs {
  std::string mode = "mogu";
  std::string checkpoint;
  std::vector<std::string> prompt;
  bool wrap = false;
};

int cmd_infer(Context& ctx, const InferArgs& a) {
  ctx.repro();
  const Mode mode = parse_mode(a.mode);
  const auto model = load_model(ctx, a.checkpoint, default_checkpoint(ctx, mode), mode == Mode::Base);
  auto prompt = parse_prompt(a.prompt);
  if (a.wrap) {
    InstructionRecord instr{prompt, Label::Malicious, false};
    prompt = wrap_attack(instr).tokens;
  }
  const auto res = decode(model, prompt, ctx.config.decode_config(), mode);
  json j;
  j["prompt"] = detokenize(prompt);
  j["tokens"] = res.tokens;
  j["text"] = res.text;
  if (res.trace) {
    j["layer_mean_w_glad"] = res.trace->layer_mean_glad();
    j["layer_mean_w_unwill"] = res.trace->layer_mean_unwill();
  }
  ctx.out << j.dump() << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string mode = "mogu";
  std::string checkpoint, corpus, eval;
  bool wrapped = false;
  std::string rejection_list, target_list;
};

int cmd_eval(Context& ctx, const EvalArgs& a) {
  auto corpus = obtain_corpus(ctx, a.corpus, a.eval);
  ctx.repro();
  const Mode mode = parse_mode(a.mode);
  const auto model = load_model(ctx, a.checkpoint, default_checkpoint(ctx, mode), mode == Mode::Base);
  const auto instrs = a.wrapped ? with_wrapped(corpus.eval) : corpus.eval;
  const auto targets = a.target_list.empty() ? harmless_targets() : PhraseList::load(a.target_list);
  const auto refusals = a.rejection_list.empty() ? rejection_expressions() : PhraseList::load(a.rejection_list);
  const auto report = evaluate(model, instrs, mode, ctx.config.decode_config(), targets, refusals);
  ctx.out << format_report_table(std::span(&report, 1));
  ctx.ensure_run_dir();
  const auto path = ctx.run_dir / ("eval-" + std::string(to_string(mode)) + (a.wrapped ? "-wrapped" : "") + ".json");
  write_text(path, report.to_json().dump(2) + "\n");
  ctx.out << "report " << path.string() << '\n';
  return kExitOk;
}

struct AnalyzeArgs {
  std::string checkpoint, corpus, eval, csv;
};

int cmd_analyze(Context& ctx, const AnalyzeArgs& a) {
  auto corpus = obtain_corpus(ctx, a.corpus, a.eval);
  ctx.repro();
  const auto model = load_model(ctx, a.checkpoint, default_checkpoint(ctx, Mode::MoGU), false);
  const auto rows = weight_stats(model, with_wrapped(corpus.eval));
  const fs::path csv = a.csv.empty() ? ctx.ensure_run_dir() / "weights.csv" : fs::path(a.csv);
  export_stats(csv, rows);
  ctx.out << weight_summary(rows);
  ctx.out << "csv " << csv.string() << '\n';
  return kExitOk;
}

struct ParamArgs {
  double base_total = 7e9;
};

int cmd_param_count(Context& ctx, const ParamArgs& a) {
  ctx.repro();
  const auto& mc = ctx.config.model;
  const auto added = count_added_params(mc);
  const auto base = static_cast<std::int64_t>(a.base_total);
  if (base <= 0) throw InputError("--base-total must be positive");
  ctx.out << added.total << '\n';
  ctx.out << "fraction " << fixed(100.0 * added.fraction_of(base), 4) << "% of " << base << '\n';
  ctx.out << "allocated " << count_allocated_added_params(mc) << '\n';
  return kExitOk;
}

struct SweepArgs {
  std::vector<int> d_router;
  std::string corpus, eval;
};

int cmd_sweep(Context& ctx, const SweepArgs& a) {
  if (a.d_router.empty()) throw InputError("sweep: --d-router needs at least one value");
  auto corpus = obtain_corpus(ctx, a.corpus, a.eval);
  ctx.repro();
  const auto instrs = with_wrapped(corpus.eval);
  json rows = json::array();
  std::ostringstream table;
  table << std::setw(8) << "d_router" << std::setw(12) << "added" << std::setw(12) << "malicious" << std::setw(12)
        << "wrapped" << std::setw(12) << "benign_rej" << '\n';
  for (int d : a.d_router) {
    RunConfig cfg = ctx.config;
    cfg.model.d_router = d;
    cfg.validate();
    const auto dir = ctx.run_dir / ("d_router-" + std::to_string(d));
    const auto model = train_all(cfg, corpus, dir, ctx.out);
    const auto rep = evaluate(model, instrs, Mode::MoGU, cfg.decode_config());
    const auto* mal = rep.find(Condition::Malicious);
    const auto* wr = rep.find(Condition::WrappedMalicious);
    const auto* ben = rep.find(Condition::Benign);
    const double asr_m = mal ? mal->asr : 0.0, asr_w = wr ? wr->asr : 0.0, rej_b = ben ? ben->rejection_rate : 0.0;
    const auto added = count_allocated_added_params(cfg.model);
    table << std::setw(8) << d << std::setw(12) << added << std::setw(12) << fixed(100 * asr_m, 2) + "%"
          << std::setw(12) << fixed(100 * asr_w, 2) + "%" << std::setw(12) << fixed(100 * rej_b, 2) + "%" << '\n';
    rows.push_back({{"d_router", d},
                    {"added_params", added},
                    {"asr_malicious", asr_m},
                    {"asr_wrapped", asr_w},
                    {"benign_rejection_rate", rej_b}});
  }
  ctx.out << table.str();
  write_text(ctx.run_dir / "sweep.json", rows.dump(2) + "\n");
  ctx.out << "report " << (ctx.run_dir / "sweep.json").string() << '\n';
  return kExitOk;
}

struct PipelineArgs {
  std::string corpus, eval;
};

int cmd_pipeline(Context& ctx, const PipelineArgs& a) {
  auto corpus = obtain_corpus(ctx, a.corpus, a.eval);
  ctx.repro();
  const auto model = train_all(ctx.config, corpus, ctx.run_dir, ctx.out);
  const auto instrs = with_wrapped(corpus.eval);
  std::vector<EvalReport> reports;
  for (Mode m : {Mode::Base, Mode::MoGU}) reports.push_back(evaluate(model, instrs, m, ctx.config.decode_config()));
  ctx.out << format_report_table(reports);
  ctx.out << weight_summary(reports.back().weight_stats);
  export_stats(ctx.run_dir / "weights.csv", reports.back().weight_stats);
  json j = json::array();
  for (const auto& r : reports) j.push_back(r.to_json());
  write_text(ctx.run_dir / "report.json", j.dump(2) + "\n");
  ctx.out << "run " << ctx.run_dir.string() << '\n';
  return kExitOk;
}

struct AblationArgs {
  std::string full, no_cl, no_l1, corpus, eval;
};

int cmd_ablation(Context& ctx, const AblationArgs& a) {
  auto corpus = obtain_corpus(ctx, a.corpus, a.eval);
  ctx.repro();
  const struct {
    const char* name;
    Ablation ablation;
    const std::string& path;
  } variants[] = {{"full", Ablation::None, a.full}, {"no_cl", Ablation::NoCl, a.no_cl},
                  {"no_l1", Ablation::NoL1, a.no_l1}};
  std::vector<MoguModel> models;
  for (const auto& v : variants) {
    if (!v.path.empty()) {
      models.push_back(load_checkpoint(v.path).model);
      continue;
    }
    RunConfig cfg = ctx.config;
    cfg.train.ablation = v.ablation;
    models.push_back(train_all(cfg, corpus, ctx.run_dir / (std::string("ablation-") + v.name), ctx.out));
  }
  std::vector<AblationVariant> slots;
  for (std::size_t i = 0; i < models.size(); ++i) slots.push_back({variants[i].name, &models[i]});
  const auto rows = ablation_report(slots, corpus.eval, ctx.config.decode_config());
  ctx.out << format_ablation_table(rows);
  ctx.ensure_run_dir();
  write_text(ctx.run_dir / "ablation.json", ablation_to_json(rows).dump(2) + "\n");
  ctx.out << "report " << (ctx.run_dir / "ablation.json").string() << '\n';
  return kExitOk;
}

int cmd_config_dump(Context& ctx) {
  ctx.repro();
  ctx.out << ctx.config.dump();
  return kExitOk;
}

std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) return std::nullopt;
  return v;
}

std::vector<int> split_fillers(std::string_view list) {
  std::vector<int> out;
  while (!list.empty()) {
    const auto comma = list.find(',');
    const auto word = list.substr(0, comma);
    auto id = token_id(word);
    if (!id) id = parse_int(std::string(word));
    if (!id || *id < tok::kFillerFirst || *id >= tok::kFillerFirst + tok::kFillerCount) {
      throw InputError("'" + std::string(word) + "' is not a filler word");
    }
    out.push_back(*id);
    if (comma == std::string_view::npos) break;
    list.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace

std::vector<int> parse_prompt(const std::vector<std::string>& words) {
  if (words.empty()) throw InputError("empty prompt");
  if (words.size() == 1 && words[0].size() > 2 && words[0][1] == ':' &&
      (words[0][0] == 'b' || words[0][0] == 'm')) {
    std::string_view rest(words[0]);
    rest.remove_prefix(2);
    const auto colon = rest.find(':');
    const auto topic_word = rest.substr(0, colon);
    auto topic = token_id(topic_word);
    if (!topic) topic = parse_int(std::string(topic_word));
    const bool benign = words[0][0] == 'b';
    const int first = benign ? tok::kBenignTopicFirst : tok::kMaliciousTopicFirst;
    if (!topic || *topic < first || *topic >= first + tok::kTopicsPerLabel) {
      throw InputError("'" + std::string(topic_word) + "' is not a " + (benign ? "benign" : "malicious") + " topic");
    }
    std::vector<int> out{tok::kBos, benign ? tok::kBenignMarker : tok::kMaliciousMarker, *topic};
    if (colon != std::string_view::npos) {
      for (int f : split_fillers(rest.substr(colon + 1))) out.push_back(f);
    }
    return out;
  }
  std::vector<int> out;
  for (const auto& w : words) {
    if (auto id = parse_int(w)) {
      out.push_back(*id);
    } else if (auto t = token_id(w)) {
      out.push_back(*t);
    } else {
      throw InputError("unknown prompt token '" + w + "'");
    }
  }
  return out;
}

fs::path run_directory(const fs::path& root, const RunConfig& config) {
  // Decoding settings do not change any trained artifact, so runs that differ
  // only in them share a directory.
  json keyed = config.to_json();
  for (auto it = keyed.begin(); it != keyed.end();) {
    if (it.key() == "model.m" || it.key().rfind("decode.", 0) == 0) {
      it = keyed.erase(it);
    } else {
      ++it;
    }
  }
  return root / ("run-" + std::to_string(config.train.seed) + "-" + hex64(fnv1a64(keyed.dump())).substr(0, 8));
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Toy safety-routing pipeline: responders, routers, decoding and evaluation", "mogu"};
  app.require_subcommand(1);
  app.fallthrough();
  app.failure_message(CLI::FailureMessage::help);

  Globals g;
  app.add_option("--config", g.config_file, "Flat JSON config file with dotted keys");
  app.add_option("--set", g.sets, "Override one config key, KEY=VALUE (repeatable)");
  app.add_option("--out-dir", g.out_dir, std::string("Artifact root (default $") + kOutDirEnv + " or ./runs)");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic train/eval corpus");
  add_model_flags(gen, g.ov);
  add_train_flags(gen, g.ov);
  add_corpus_flags(gen, g.ov);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Run one training phase");
  train->add_option("--phase", train_args.phase, "glad | unwill | router | sft")
      ->required()
      ->check(CLI::IsMember({"glad", "unwill", "router", "sft"}));
  train->add_option("--from", train_args.from, "Starting checkpoint");
  train->add_option("--corpus", train_args.corpus, "Training pairs file");
  train->add_option("--eval-set", train_args.eval, "Held-out instructions file");
  add_model_flags(train, g.ov);
  add_train_flags(train, g.ov);
  add_corpus_flags(train, g.ov);

  InferArgs infer_args;
  auto* infer = app.add_subcommand("infer", "Decode one prompt");
  infer->add_option("--mode", infer_args.mode, "base | glad | unwill | mogu | sft");
  infer->add_option("--checkpoint", infer_args.checkpoint, "Model checkpoint");
  infer->add_flag("--wrap", infer_args.wrap, "Apply the attack wrapper to the prompt");
  infer->add_option("--max-new-tokens", g.ov.max_new_tokens, "Generation budget");
  infer->add_option("prompt", infer_args.prompt, "Token ids, token words, or b:<topic> / m:<topic>")->required();
  add_model_flags(infer, g.ov);
  add_train_flags(infer, g.ov);
  add_corpus_flags(infer, g.ov);

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Score responses on the held-out split");
  eval->add_option("--mode", eval_args.mode, "base | glad | unwill | mogu | sft");
  eval->add_flag("--wrapped", eval_args.wrapped, "Add a wrapped copy of every malicious instruction");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Model checkpoint");
  eval->add_option("--corpus", eval_args.corpus, "Training pairs file");
  eval->add_option("--eval-set", eval_args.eval, "Held-out instructions file");
  eval->add_option("--rejection-list", eval_args.rejection_list, "File of refusal expressions, one per line");
  eval->add_option("--target-list", eval_args.target_list, "File of harmless targets, one per line");
  eval->add_option("--max-new-tokens", g.ov.max_new_tokens, "Generation budget");
  add_model_flags(eval, g.ov);
  add_train_flags(eval, g.ov);
  add_corpus_flags(eval, g.ov);

  AnalyzeArgs analyze_args;
  auto* analyze = app.add_subcommand("analyze-weights", "Export per-instruction router weight means");
  analyze->add_option("--checkpoint", analyze_args.checkpoint, "Model checkpoint");
  analyze->add_option("--csv", analyze_args.csv, "Output CSV path");
  analyze->add_option("--corpus", analyze_args.corpus, "Training pairs file");
  analyze->add_option("--eval-set", analyze_args.eval, "Held-out instructions file");
  add_model_flags(analyze, g.ov);
  add_train_flags(analyze, g.ov);
  add_corpus_flags(analyze, g.ov);

  ParamArgs param_args;
  auto* params = app.add_subcommand("param-count", "Count parameters added by adapters and routers");
  params->add_option("--base-total", param_args.base_total, "Base model size for the fraction");
  add_model_flags(params, g.ov);

  SweepArgs sweep_args;
  auto* sweep = app.add_subcommand("sweep", "Train and evaluate one pipeline per router width");
  sweep->add_option("--d-router", sweep_args.d_router, "Comma-separated router widths")
      ->delimiter(',')
      ->required();
  sweep->add_option("--corpus", sweep_args.corpus, "Training pairs file");
  sweep->add_option("--eval-set", sweep_args.eval, "Held-out instructions file");
  sweep->add_option("--seed", g.ov.seed, "Seed for corpus, initialization, shuffling and sampling");
  add_train_flags(sweep, g.ov);
  add_corpus_flags(sweep, g.ov);

  PipelineArgs pipe_args;
  auto* pipeline = app.add_subcommand("pipeline", "Train all three phases and evaluate");
  pipeline->add_option("--corpus", pipe_args.corpus, "Training pairs file");
  pipeline->add_option("--eval-set", pipe_args.eval, "Held-out instructions file");
  add_model_flags(pipeline, g.ov);
  add_train_flags(pipeline, g.ov);
  add_corpus_flags(pipeline, g.ov);

  AblationArgs abl_args;
  auto* ablation = app.add_subcommand("ablation-report", "Wrapped and plain malicious ASR per ablation variant");
  ablation->add_option("--full", abl_args.full, "Checkpoint of the full method");
  ablation->add_option("--no-cl", abl_args.no_cl, "Checkpoint trained without the contrastive ratio");
  ablation->add_option("--no-l1", abl_args.no_l1, "Checkpoint trained without the L1 term");
  ablation->add_option("--corpus", abl_args.corpus, "Training pairs file");
  ablation->add_option("--eval-set", abl_args.eval, "Held-out instructions file");
  add_model_flags(ablation, g.ov);
  add_train_flags(ablation, g.ov);
  add_corpus_flags(ablation, g.ov);

  auto* dump = app.add_subcommand("config-dump", "Print the resolved configuration");
  add_model_flags(dump, g.ov);
  add_train_flags(dump, g.ov);
  add_corpus_flags(dump, g.ov);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    Context ctx{resolve_config(g), {}, out, err};
    ctx.run_dir = run_directory(output_root(g), ctx.config);
    if (gen->parsed()) return cmd_gen_data(ctx);
    if (train->parsed()) return cmd_train(ctx, train_args);
    if (infer->parsed()) return cmd_infer(ctx, infer_args);
    if (eval->parsed()) return cmd_eval(ctx, eval_args);
    if (analyze->parsed()) return cmd_analyze(ctx, analyze_args);
    if (params->parsed()) return cmd_param_count(ctx, param_args);
    if (sweep->parsed()) return cmd_sweep(ctx, sweep_args);
    if (pipeline->parsed()) return cmd_pipeline(ctx, pipe_args);
    if (ablation->parsed()) return cmd_ablation(ctx, abl_args);
    if (dump->parsed()) return cmd_config_dump(ctx);
    err << app.help();
    return kExitUsage;
  } catch (const std::logic_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::runtime_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

}  // namespace mogu
