// hptk - batch driver for the hybrid-model compression pipeline:
// toy model generation, calibration data, importance scoring, pruning,
// architecture search, distillation recovery, and evaluation.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hptk/calib.hpp"
#include "hptk/checkpoint.hpp"
#include "hptk/config_file.hpp"
#include "hptk/distiller.hpp"
#include "hptk/error.hpp"
#include "hptk/importance.hpp"
#include "hptk/model.hpp"
#include "hptk/pruner.hpp"
#include "hptk/searcher.hpp"

namespace {

constexpr const char* kToolVersion = "0.1.0";

using namespace hptk;
using nlohmann::ordered_json;

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

struct RunManifest {
  std::string command;
  std::string config_path;
  long long seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string note;
  std::string started_utc = utc_now();
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  // One sidecar per output artifact; timestamps live only here so artifact
  // files stay byte-identical between identical runs.
  void write() const {
    ordered_json j;
    j["command"] = command;
    j["config"] = config_path;
    j["seed"] = seed;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["tool_version"] = kToolVersion;
    j["started_utc"] = started_utc;
    j["elapsed_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!note.empty()) j["note"] = note;
    for (const std::string& out : outputs) {
      std::ofstream f(out + ".manifest.json", std::ios::trunc);
      if (!f) throw IoError("cannot write manifest for " + out);
      f << j.dump(2) << '\n';
    }
  }
};

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw IoError("short write to " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

CalibSet load_calib_checked(const std::string& path) {
  CalibSet calib = read_calib(path);
  if (calib.empty()) throw EmptyDataError("calibration file has no sequences: " + path);
  return calib;
}

std::vector<Index> parse_index_list(const std::string& csv, const char* what) {
  std::vector<Index> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw ParameterError(std::string(what) + ": '" + item + "' is not an integer");
    }
  }
  if (out.empty()) throw ParameterError(std::string(what) + ": empty value list");
  return out;
}

std::vector<Index> depth_order_from_kld(const Array& kld) {
  // Ascending importance: the first entries are dropped first.
  std::vector<Index> order(static_cast<size_t>(kld.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return kld[a] < kld[b]; });
  return order;
}

// ---------------------------------------------------------------- init-toy
int cmd_init_toy(const std::string& config_path, long long seed,
                 const std::string& out) {
  RunManifest mf{"init-toy", config_path, seed, {config_path}, {out}};
  ModelConfig config = model_config_from_file(ConfigFile::load(config_path));
  HybridModel model = init_model(config, static_cast<std::uint64_t>(seed));
  write_checkpoint(out, model);
  mf.write();
  std::cout << "wrote " << out << " (" << param_count(config) << " parameters)\n";
  return 0;
}

// ---------------------------------------------------------------- gen-data
int cmd_gen_data(Index vocab, Index sequences, Index seq_len, Index branching,
                 long long seed, const std::string& out) {
  RunManifest mf{"gen-data", "", seed, {}, {out}};
  CalibSet data = gen_markov_sequences(vocab, sequences, seq_len, branching,
                                       static_cast<std::uint64_t>(seed));
  write_calib(out, data);
  mf.write();
  std::cout << "wrote " << out << " (" << sequences << " sequences x " << seq_len
            << " tokens)\n";
  return 0;
}

// ------------------------------------------------------------------- score
int cmd_score(const std::string& ckpt, const std::string& calib_path,
              const std::string& metrics_csv, const std::string& out,
              const std::string& csv_out, bool raw_sum, Index kld_samples) {
  RunManifest mf{"score", "", 0, {ckpt, calib_path}, {out}};
  HybridModel model = read_checkpoint(ckpt);
  CalibSet calib = load_calib_checked(calib_path);

  ScoreOptions opts;
  opts.mamba = opts.ffn = opts.embedding = opts.flap = opts.attention = false;
  opts.layer_kld = false;
  std::stringstream ss(metrics_csv);
  std::string m;
  while (std::getline(ss, m, ',')) {
    if (m == "mamba") opts.mamba = true;
    else if (m == "ffn") opts.ffn = true;
    else if (m == "emb") opts.embedding = true;
    else if (m == "flap") opts.flap = true;
    else if (m == "att") opts.attention = true;
    else if (m == "layer_kld") opts.layer_kld = true;
    else if (!m.empty())
      throw ParameterError("unknown metric '" + m +
                           "' (expected mamba,ffn,emb,flap,att,layer_kld)");
  }
  opts.aggregation = raw_sum ? Aggregation::RawSum : Aggregation::MeanThenL2;
  opts.kld_max_sequences = kld_samples;

  ScoreSet scores = collect_scores(model, calib, opts);
  write_text_file(out, scores.to_json() + "\n");
  if (!csv_out.empty()) {
    write_text_file(csv_out, layer_kld_to_csv(scores, model.config));
    mf.outputs.push_back(csv_out);
  }
  mf.write();
  std::cout << "wrote " << out << "\n";
  return 0;
}

// ------------------------------------------------------------------- prune
int cmd_prune(const std::string& ckpt, const std::string& plan_path,
              const std::string& scores_path, Index keep_layers, Index keep_emb,
              Index keep_ffn, Index keep_heads_per_group, Index keep_channels,
              bool use_flap, const std::string& out, const std::string& plan_out) {
  RunManifest mf{"prune", "", 0, {ckpt}, {out}};
  HybridModel model = read_checkpoint(ckpt);
  PrunePlan plan;
  if (!plan_path.empty()) {
    mf.inputs.push_back(plan_path);
    plan = PrunePlan::from_json(read_text_file(plan_path));
  } else if (!scores_path.empty()) {
    mf.inputs.push_back(scores_path);
    ScoreSet scores = ScoreSet::from_json(read_text_file(scores_path));
    PruneTargets targets{keep_layers, keep_emb, keep_ffn, keep_heads_per_group,
                         keep_channels};
    plan = use_flap ? plan_from_flap(model.config, scores, targets)
                    : plan_from_scores(model.config, scores, targets);
  } else {
    throw ParameterError("prune: pass --plan or --scores");
  }
  HybridModel pruned = apply_plan(model, plan);
  write_checkpoint(out, pruned);
  if (!plan_out.empty()) {
    write_text_file(plan_out, plan.to_json() + "\n");
    mf.outputs.push_back(plan_out);
  }
  mf.write();
  std::cout << "wrote " << out << " (" << param_count(pruned.config) << " parameters, "
            << pattern_to_string(pruned.config.layer_pattern) << ")\n";
  return 0;
}

// ------------------------------------------------------------------ search
int cmd_search(const std::string& ckpt, const std::string& calib_path, Index budget,
               double tolerance, Index topk, Index kd_tokens, Index jobs,
               const std::string& grid_layers, const std::string& grid_emb,
               const std::string& grid_ffn, const std::string& grid_heads,
               const std::string& grid_channels, const std::string& out,
               const std::string& winner_plan_out, const KDConfig& kd_base,
               Index kld_samples) {
  RunManifest mf{"search", "", static_cast<long long>(kd_base.seed),
                 {ckpt, calib_path}, {out}};
  HybridModel parent = read_checkpoint(ckpt);
  CalibSet calib = load_calib_checked(calib_path);

  SearchGrid grid;
  grid.layers = grid_layers.empty() ? std::vector<Index>{parent.config.n_layers()}
                                    : parse_index_list(grid_layers, "--grid-layers");
  grid.d_e = grid_emb.empty() ? std::vector<Index>{parent.config.d_e}
                              : parse_index_list(grid_emb, "--grid-emb");
  grid.d_ffn = grid_ffn.empty() ? std::vector<Index>{parent.config.d_ffn}
                                : parse_index_list(grid_ffn, "--grid-ffn");
  grid.m_h = grid_heads.empty() ? std::vector<Index>{parent.config.m_h}
                                : parse_index_list(grid_heads, "--grid-heads");
  grid.m_d = grid_channels.empty() ? std::vector<Index>{parent.config.m_d}
                                   : parse_index_list(grid_channels, "--grid-channels");

  const bool needs_depth =
      *std::min_element(grid.layers.begin(), grid.layers.end()) <
      parent.config.n_layers();
  ScoreOptions opts;
  opts.attention = false;
  opts.flap = false;
  opts.layer_kld = needs_depth;
  opts.kld_max_sequences = kld_samples;
  ScoreSet scores = collect_scores(parent, calib, opts);

  std::vector<Index> drop_order;
  if (needs_depth) {
    drop_order = depth_order_from_kld(scores.layer_kld);
  } else {
    drop_order.resize(static_cast<size_t>(parent.config.n_layers()));
    std::iota(drop_order.begin(), drop_order.end(), Index{0});
  }

  std::vector<Candidate> candidates =
      enumerate_candidates(parent.config, grid, drop_order, budget, tolerance);
  std::cout << candidates.size() << " candidates within budget\n";
  if (candidates.empty()) {
    write_text_file(out, search_to_csv(candidates));
    mf.note = "no candidates met the parameter constraint";
    mf.write();
    return 0;
  }

  candidates = zero_shot_rank(parent, scores, candidates, calib, drop_order, jobs);

  KdRankOptions kdo;
  kdo.top_k = topk;
  kdo.kd_token_budget = kd_tokens;
  kdo.kd = kd_base;
  kdo.jobs = jobs;
  candidates =
      lightweight_kd_rank(parent, scores, candidates, calib, calib, drop_order, kdo);

  Candidate winner = select_winner(candidates);
  write_text_file(out, search_to_csv(candidates));
  if (!winner_plan_out.empty()) {
    PrunePlan plan =
        plan_from_scores(parent.config, scores, candidate_targets(parent.config, winner));
    if (winner.n_layers < parent.config.n_layers()) {
      std::vector<Index> kept(drop_order.begin() +
                                  (parent.config.n_layers() - winner.n_layers),
                              drop_order.end());
      std::sort(kept.begin(), kept.end());
      plan.kept_layers = kept;
    }
    write_text_file(winner_plan_out, plan.to_json() + "\n");
    mf.outputs.push_back(winner_plan_out);
  }
  mf.note =
      "ranking uses lightweight KD re-ranking of the zero-shot top-k; "
      "zero-shot order alone is not a reliable ranking";
  mf.write();
  std::cout << "winner: layers=" << winner.n_layers << " emb=" << winner.d_e
            << " ffn=" << winner.d_ffn << " heads=" << winner.m_h
            << " head_channels=" << winner.m_d << " params=" << winner.params << "\n";
  return 0;
}

// ----------------------------------------------------------------- distill
int cmd_distill(const std::string& teacher_path, const std::string& student_path,
                const std::string& data_path, const std::string& out,
                const std::string& trace_out, const KDConfig& kd,
                Index checkpoint_every) {
  RunManifest mf{"distill", "", static_cast<long long>(kd.seed),
                 {teacher_path, student_path, data_path}, {out}};
  HybridModel teacher = read_checkpoint(teacher_path);
  HybridModel student = read_checkpoint(student_path);
  CalibSet data = load_calib_checked(data_path);

  CheckpointHook hook;
  if (checkpoint_every > 0) {
    hook = [&](Index step, const HybridModel& m) {
      if (step % checkpoint_every == 0 && step < kd.total_steps) {
        write_checkpoint(out + ".step" + std::to_string(step), m);
      }
    };
  }
  std::vector<TraceRow> trace = distill(student, teacher, data, kd, hook);
  write_checkpoint(out, student);
  if (!trace_out.empty()) {
    write_text_file(trace_out, trace_to_csv(trace));
    mf.outputs.push_back(trace_out);
  }
  mf.write();
  if (!trace.empty()) {
    std::cout << "final kd loss " << trace.back().loss << " after " << trace.size()
              << " steps\n";
  }
  return 0;
}

// -------------------------------------------------------------------- eval
int cmd_eval(const std::string& ckpt, const std::string& data_path,
             const std::string& teacher_path, double tau) {
  HybridModel model = read_checkpoint(ckpt);
  CalibSet data = load_calib_checked(data_path);
  std::printf("cross_entropy=%.9f\n", mean_cross_entropy(model, data));
  if (!teacher_path.empty()) {
    HybridModel teacher = read_checkpoint(teacher_path);
    std::printf("fkld=%.9f\n", mean_fkld(teacher, model, data, tau));
  }
  return 0;
}

// ------------------------------------------------------------------- train
int cmd_train(const std::string& ckpt, const std::string& data_path,
              const std::string& out, const TrainConfig& cfg,
              const std::string& trace_out) {
  RunManifest mf{"train", "", static_cast<long long>(cfg.seed), {ckpt, data_path}, {out}};
  HybridModel model = read_checkpoint(ckpt);
  CalibSet data = load_calib_checked(data_path);
  std::vector<TraceRow> trace = train_ce(model, data, cfg);
  write_checkpoint(out, model);
  if (!trace_out.empty()) {
    write_text_file(trace_out, trace_to_csv(trace));
    mf.outputs.push_back(trace_out);
  }
  mf.write();
  if (!trace.empty()) std::cout << "final ce loss " << trace.back().loss << "\n";
  return 0;
}

// -------------------------------------------------------- compare-metrics
int cmd_compare_metrics(const std::string& ckpt, const std::string& calib_path,
                        const std::string& axis, const std::string& values_csv,
                        const std::string& out) {
  RunManifest mf{"compare-metrics", "", 0, {ckpt, calib_path}, {out}};
  HybridModel model = read_checkpoint(ckpt);
  CalibSet calib = load_calib_checked(calib_path);
  write_text_file(out, metric_comparison_csv(model, calib, axis,
                                             parse_index_list(values_csv, "--values")));
  mf.write();
  std::cout << "wrote " << out << "\n";
  return 0;
}

// ------------------------------------------------------------- sweep-mamba
int cmd_sweep_mamba(const std::string& ckpt, const std::string& calib_path,
                    const std::string& axis, const std::string& values_csv,
                    const std::string& out, Index proxy_seq_len) {
  RunManifest mf{"sweep-mamba", "", 0, {ckpt, calib_path}, {out}};
  HybridModel model = read_checkpoint(ckpt);
  CalibSet calib = load_calib_checked(calib_path);
  write_text_file(out,
                  mamba_axis_sweep_csv(model, calib, axis,
                                       parse_index_list(values_csv, "--values"),
                                       proxy_seq_len));
  mf.write();
  std::cout << "wrote " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hybrid Mamba/Attention/FFN compression toolkit"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  std::string config_path, out, ckpt, calib_path, plan_path, scores_path;
  long long seed = 0;
  auto* init = app.add_subcommand("init-toy", "randomly initialize a toy model");
  init->add_option("--config", config_path, "model config file")->required();
  init->add_option("--seed", seed, "rng seed");
  init->add_option("--out", out, "output checkpoint")->required();

  Index gd_vocab = 512, gd_sequences = 64, gd_seq_len = 128, gd_branching = 4;
  auto* gen = app.add_subcommand("gen-data", "generate Markov-chain token data");
  gen->add_option("--vocab", gd_vocab, "vocabulary size");
  gen->add_option("--sequences", gd_sequences, "number of sequences");
  gen->add_option("--seq-len", gd_seq_len, "tokens per sequence");
  gen->add_option("--branching", gd_branching, "successors per token");
  gen->add_option("--seed", seed, "rng seed");
  gen->add_option("--out", out, "output calibration file")->required();

  std::string metrics = "mamba,ffn,emb,flap,layer_kld";
  std::string csv_out;
  bool raw_sum = false;
  Index kld_samples = 0;
  auto* score = app.add_subcommand("score", "compute importance scores");
  score->add_option("--ckpt", ckpt, "model checkpoint")->required();
  score->add_option("--calib", calib_path, "calibration token file")->required();
  score->add_option("--metrics", metrics, "comma list: mamba,ffn,emb,flap,att,layer_kld");
  score->add_option("--out", out, "output JSON report")->required();
  score->add_option("--csv", csv_out, "also export layer importance CSV");
  score->add_flag("--raw-sum", raw_sum, "use raw-sum aggregation instead of mean/L2");
  score->add_option("--kld-samples", kld_samples, "sequences used for layer KLD (0=all)");

  Index keep_layers = 0, keep_emb = 0, keep_ffn = 0, keep_hpg = 0, keep_channels = 0;
  bool use_flap = false;
  std::string plan_out;
  auto* prune = app.add_subcommand("prune", "apply or build a prune plan");
  prune->add_option("--ckpt", ckpt, "model checkpoint")->required();
  prune->add_option("--plan", plan_path, "prune plan JSON");
  prune->add_option("--scores", scores_path, "score report JSON");
  prune->add_option("--keep-layers", keep_layers, "layers to keep (0 = all)");
  prune->add_option("--keep-emb", keep_emb, "embedding channels to keep (0 = all)");
  prune->add_option("--keep-ffn", keep_ffn, "FFN neurons to keep (0 = all)");
  prune->add_option("--keep-heads-per-group", keep_hpg, "Mamba heads per group (0 = all)");
  prune->add_option("--keep-channels", keep_channels, "Mamba head channels (0 = all)");
  prune->add_flag("--flap", use_flap, "rank Mamba heads / FFN neurons by FLAP");
  prune->add_option("--out", out, "output checkpoint")->required();
  prune->add_option("--plan-out", plan_out, "write the applied plan as JSON");

  Index budget = 0, topk = 4, kd_tokens = 0, jobs = 1;
  double tolerance = 0.02;
  std::string grid_layers, grid_emb, grid_ffn, grid_heads, grid_channels, winner_plan;
  KDConfig kd_base;
  kd_base.lr_start = 0.5;
  kd_base.lr_end = 0.05;
  kd_base.warmup_steps = 10;
  kd_base.batch_size = 4;
  kd_base.seq_len = 32;
  auto* search = app.add_subcommand("search", "architecture search under a budget");
  search->add_option("--ckpt", ckpt, "parent checkpoint")->required();
  search->add_option("--calib", calib_path, "calibration token file")->required();
  search->add_option("--budget", budget, "parameter budget")->required();
  search->add_option("--tolerance", tolerance, "budget tolerance fraction");
  search->add_option("--topk", topk, "candidates promoted to lightweight KD");
  search->add_option("--kd-tokens", kd_tokens, "token budget for lightweight KD");
  search->add_option("--jobs", jobs, "parallel candidate workers");
  search->add_option("--grid-layers", grid_layers, "comma list of layer counts");
  search->add_option("--grid-emb", grid_emb, "comma list of embedding dims");
  search->add_option("--grid-ffn", grid_ffn, "comma list of FFN dims");
  search->add_option("--grid-heads", grid_heads, "comma list of Mamba head counts");
  search->add_option("--grid-channels", grid_channels, "comma list of head channels");
  search->add_option("--out", out, "output CSV")->required();
  search->add_option("--winner-plan", winner_plan, "write the winner's prune plan");
  search->add_option("--kd-lr-start", kd_base.lr_start, "lightweight KD peak lr");
  search->add_option("--kd-lr-end", kd_base.lr_end, "lightweight KD final lr");
  search->add_option("--kd-warmup", kd_base.warmup_steps, "lightweight KD warmup steps");
  search->add_option("--kd-batch", kd_base.batch_size, "lightweight KD batch size");
  search->add_option("--kd-seq", kd_base.seq_len, "lightweight KD window length");
  search->add_option("--kd-tau", kd_base.tau, "distillation temperature");
  search->add_option("--seed", seed, "rng seed for KD batches");
  search->add_option("--kld-samples", kld_samples, "sequences for layer KLD (0=all)");

  std::string teacher_path, student_path, trace_out;
  KDConfig kd;
  kd.lr_start = 0.5;
  kd.lr_end = 0.05;
  kd.warmup_steps = 60;
  kd.total_steps = 500;
  kd.batch_size = 4;
  kd.seq_len = 32;
  Index checkpoint_every = 0;
  std::string kd_config_path;
  auto* dist = app.add_subcommand("distill", "recover a pruned model against a teacher");
  dist->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
  dist->add_option("--student", student_path, "student checkpoint")->required();
  dist->add_option("--calib", calib_path, "training token file")->required();
  dist->add_option("--out", out, "output checkpoint")->required();
  dist->add_option("--trace", trace_out, "loss trace CSV");
  dist->add_option("--config", kd_config_path, "KD config file (flags override)");
  dist->add_option("--tau", kd.tau, "softmax temperature");
  dist->add_option("--lr-start", kd.lr_start, "peak learning rate");
  dist->add_option("--lr-end", kd.lr_end, "final learning rate");
  dist->add_option("--warmup", kd.warmup_steps, "linear warmup steps");
  dist->add_option("--steps", kd.total_steps, "total steps");
  dist->add_option("--batch", kd.batch_size, "sequences per step");
  dist->add_option("--seq-len", kd.seq_len, "window length");
  dist->add_option("--seed", seed, "batch sampling seed");
  dist->add_option("--checkpoint-every", checkpoint_every, "periodic checkpoints");

  double eval_tau = 1.0;
  auto* eval = app.add_subcommand("eval", "evaluate cross entropy (and FKLD vs teacher)");
  eval->add_option("--ckpt", ckpt, "model checkpoint")->required();
  eval->add_option("--calib", calib_path, "evaluation token file")->required();
  eval->add_option("--teacher", teacher_path, "teacher checkpoint for FKLD");
  eval->add_option("--tau", eval_tau, "FKLD temperature");

  TrainConfig tc;
  auto* train = app.add_subcommand("train", "fit a toy model with cross entropy");
  train->add_option("--ckpt", ckpt, "input checkpoint")->required();
  train->add_option("--calib", calib_path, "training token file")->required();
  train->add_option("--out", out, "output checkpoint")->required();
  train->add_option("--steps", tc.steps, "training steps");
  train->add_option("--lr", tc.lr, "learning rate");
  train->add_option("--batch", tc.batch_size, "sequences per step");
  train->add_option("--seq-len", tc.seq_len, "window length");
  train->add_option("--seed", seed, "batch sampling seed");
  train->add_option("--trace", trace_out, "loss trace CSV");

  std::string axis = "ffn", values_csv;
  auto* cmp = app.add_subcommand("compare-metrics",
                                 "zero-shot loss of L2 vs FLAP ranking at shared targets");
  cmp->add_option("--ckpt", ckpt, "model checkpoint")->required();
  cmp->add_option("--calib", calib_path, "calibration token file")->required();
  cmp->add_option("--axis", axis, "ffn or heads");
  cmp->add_option("--values", values_csv, "comma list of keep targets")->required();
  cmp->add_option("--out", out, "output CSV")->required();

  Index proxy_seq_len = 512;
  std::string sweep_axis = "heads";
  auto* sweep = app.add_subcommand("sweep-mamba",
                                   "isolate Mamba head vs head-channel pruning");
  sweep->add_option("--ckpt", ckpt, "model checkpoint")->required();
  sweep->add_option("--calib", calib_path, "calibration token file")->required();
  sweep->add_option("--axis", sweep_axis, "heads or channels");
  sweep->add_option("--values", values_csv, "comma list of keep targets")->required();
  sweep->add_option("--out", out, "output CSV")->required();
  sweep->add_option("--proxy-seq-len", proxy_seq_len, "sequence length for the proxy");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (init->parsed()) return cmd_init_toy(config_path, seed, out);
    if (gen->parsed())
      return cmd_gen_data(gd_vocab, gd_sequences, gd_seq_len, gd_branching, seed, out);
    if (score->parsed())
      return cmd_score(ckpt, calib_path, metrics, out, csv_out, raw_sum, kld_samples);
    if (prune->parsed())
      return cmd_prune(ckpt, plan_path, scores_path, keep_layers, keep_emb, keep_ffn,
                       keep_hpg, keep_channels, use_flap, out, plan_out);
    if (search->parsed()) {
      kd_base.seed = static_cast<std::uint64_t>(seed);
      return cmd_search(ckpt, calib_path, budget, tolerance, topk, kd_tokens, jobs,
                        grid_layers, grid_emb, grid_ffn, grid_heads, grid_channels, out,
                        winner_plan, kd_base, kld_samples);
    }
    if (dist->parsed()) {
      if (!kd_config_path.empty()) {
        // File values fill in everything the user did not pass explicitly.
        KDConfig file_kd = kd_config_from_file(ConfigFile::load(kd_config_path), kd);
        if (!dist->count("--tau")) kd.tau = file_kd.tau;
        if (!dist->count("--lr-start")) kd.lr_start = file_kd.lr_start;
        if (!dist->count("--lr-end")) kd.lr_end = file_kd.lr_end;
        if (!dist->count("--warmup")) kd.warmup_steps = file_kd.warmup_steps;
        if (!dist->count("--steps")) kd.total_steps = file_kd.total_steps;
        if (!dist->count("--batch")) kd.batch_size = file_kd.batch_size;
        if (!dist->count("--seq-len")) kd.seq_len = file_kd.seq_len;
        if (!dist->count("--seed")) seed = static_cast<long long>(file_kd.seed);
      }
      kd.seed = static_cast<std::uint64_t>(seed);
      kd.validate();
      return cmd_distill(teacher_path, student_path, calib_path, out, trace_out, kd,
                         checkpoint_every);
    }
    if (eval->parsed()) return cmd_eval(ckpt, calib_path, teacher_path, eval_tau);
    if (train->parsed()) {
      tc.seed = static_cast<std::uint64_t>(seed);
      return cmd_train(ckpt, calib_path, out, tc, trace_out);
    }
    if (cmp->parsed()) return cmd_compare_metrics(ckpt, calib_path, axis, values_csv, out);
    if (sweep->parsed())
      return cmd_sweep_mamba(ckpt, calib_path, sweep_axis, values_csv, out, proxy_seq_len);
  } catch (const EmptyDataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const PlanError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
