#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "helpers.hpp"
#include "hptk/calib.hpp"
#include "hptk/checkpoint.hpp"
#include "hptk/importance.hpp"
#include "hptk/pruner.hpp"

using namespace hptk;
using namespace hptk::testutil;

namespace {

std::string cli_bin() {
  const char* bin = std::getenv("HPTK_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "HPTK_BIN must point at the hptk binary");
  return bin;
}

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  std::string cmd = cli_bin() + std::string(" ") + args + " 2>&1";
  std::array<char, 4096> buf{};
  std::string output;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (fgets(buf.data(), static_cast<int>(buf.size()), pipe)) output += buf.data();
  int status = pclose(pipe);
  RunResult r;
  r.output = output;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

struct WorkDir {
  std::string dir;
  WorkDir() {
    dir = "/tmp/hptk_cli_" + std::to_string(::getpid());
    std::system(("mkdir -p " + dir).c_str());
  }
  std::string operator/(const std::string& name) const { return dir + "/" + name; }
};

const char* kToyConfig =
    "layer_pattern = MAF\n"
    "d_e = 16\n"
    "d_ffn = 24\n"
    "m_h = 4\n"
    "m_d = 4\n"
    "g = 2\n"
    "d_s = 8\n"
    "n_att_heads = 2\n"
    "vocab = 48\n"
    "conv_k = 4\n";

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  REQUIRE(f.good());
  f << content;
}

}  // namespace

TEST_CASE("cli: init-toy is deterministic per seed and validates configs") {
  WorkDir wd;
  write_file(wd / "toy.cfg", kToyConfig);

  auto r1 = run_cli("init-toy --config " + (wd / "toy.cfg") + " --seed 7 --out " +
                    (wd / "a.ckpt"));
  REQUIRE(r1.exit_code == 0);
  auto r2 = run_cli("init-toy --config " + (wd / "toy.cfg") + " --seed 7 --out " +
                    (wd / "b.ckpt"));
  REQUIRE(r2.exit_code == 0);
  CHECK(slurp(wd / "a.ckpt") == slurp(wd / "b.ckpt"));

  // Round trip: the checkpoint parses back and matches the analytic count.
  HybridModel m = read_checkpoint(wd / "a.ckpt");
  Index total = 0;
  for (const auto& [name, t] : named_tensors(m)) total += t->numel();
  CHECK(total == param_count(m.config));

  // Invalid config: m_h not divisible by g.
  write_file(wd / "bad.cfg",
             "layer_pattern = M\nd_e = 16\nd_ffn = 24\nm_h = 5\nm_d = 4\ng = 2\n"
             "d_s = 8\nn_att_heads = 2\nvocab = 48\n");
  auto r3 = run_cli("init-toy --config " + (wd / "bad.cfg") + " --seed 1 --out " +
                    (wd / "bad.ckpt"));
  CHECK(r3.exit_code == 2);
}

TEST_CASE("cli: score reports follow the schema and are reproducible") {
  WorkDir wd;
  write_file(wd / "toy.cfg", kToyConfig);
  REQUIRE(run_cli("init-toy --config " + (wd / "toy.cfg") + " --seed 3 --out " +
                  (wd / "m.ckpt"))
              .exit_code == 0);
  REQUIRE(run_cli("gen-data --vocab 48 --sequences 8 --seq-len 24 --branching 4 "
                  "--seed 5 --out " +
                  (wd / "calib.bin"))
              .exit_code == 0);

  auto r = run_cli("score --ckpt " + (wd / "m.ckpt") + " --calib " + (wd / "calib.bin") +
                   " --metrics mamba,ffn,emb,flap,att,layer_kld --out " +
                   (wd / "s1.json"));
  REQUIRE(r.exit_code == 0);
  auto report = nlohmann::json::parse(slurp(wd / "s1.json"));
  bool found_mamba = false;
  for (const auto& layer : report.at("layers")) {
    if (layer.at("kind") == "mamba" && layer.contains("s_d")) {
      found_mamba = true;
      CHECK(layer.at("s_d").size() == 4);  // m_d
      CHECK(layer.at("f_h").size() == 4);  // m_h
      CHECK(layer.at("s").size() == 16);   // m_h * m_d
    }
  }
  CHECK(found_mamba);
  CHECK(report.at("embedding").size() == 16);
  CHECK(report.at("layer_kld").size() == 3);

  // Identical runs produce identical reports.
  REQUIRE(run_cli("score --ckpt " + (wd / "m.ckpt") + " --calib " + (wd / "calib.bin") +
                  " --metrics mamba,ffn,emb,flap,att,layer_kld --out " + (wd / "s2.json"))
              .exit_code == 0);
  CHECK(slurp(wd / "s1.json") == slurp(wd / "s2.json"));

  // FLAP values equal an in-process two-pass recomputation.
  HybridModel m = read_checkpoint(wd / "m.ckpt");
  CalibSet calib = read_calib(wd / "calib.bin");
  Array flap = score_flap(m, 0, calib);
  const auto& layer0 = report.at("layers").at(0);
  REQUIRE(layer0.at("index") == 0);
  for (Index i = 0; i < flap.size(); ++i) {
    CHECK(std::abs(flap[i] -
                   layer0.at("flap").at(static_cast<size_t>(i)).get<double>()) <= 1e-9);
  }
}

TEST_CASE("cli: exit codes for missing and empty inputs") {
  WorkDir wd;
  write_file(wd / "toy.cfg", kToyConfig);
  REQUIRE(run_cli("init-toy --config " + (wd / "toy.cfg") + " --seed 3 --out " +
                  (wd / "m.ckpt"))
              .exit_code == 0);

  auto missing = run_cli("score --ckpt " + (wd / "m.ckpt") + " --calib " +
                         (wd / "nope.bin") + " --out " + (wd / "s.json"));
  CHECK(missing.exit_code == 2);

  write_calib(wd / "empty.bin", {});
  auto empty = run_cli("score --ckpt " + (wd / "m.ckpt") + " --calib " +
                       (wd / "empty.bin") + " --out " + (wd / "s.json"));
  CHECK(empty.exit_code == 3);

  auto usage = run_cli("score");
  CHECK(usage.exit_code == 2);
}

TEST_CASE("cli: prune with the identity plan differs only in the manifest") {
  WorkDir wd;
  write_file(wd / "toy.cfg", kToyConfig);
  REQUIRE(run_cli("init-toy --config " + (wd / "toy.cfg") + " --seed 9 --out " +
                  (wd / "m.ckpt"))
              .exit_code == 0);
  HybridModel m = read_checkpoint(wd / "m.ckpt");
  write_file(wd / "identity.json", identity_plan(m.config).to_json());
  auto r = run_cli("prune --ckpt " + (wd / "m.ckpt") + " --plan " +
                   (wd / "identity.json") + " --out " + (wd / "same.ckpt"));
  REQUIRE(r.exit_code == 0);
  CHECK(slurp(wd / "m.ckpt") == slurp(wd / "same.ckpt"));
  CHECK(slurp(wd / "same.ckpt.manifest.json").find("prune") != std::string::npos);
}

TEST_CASE("cli: plan/model mismatch exits 4") {
  WorkDir wd;
  write_file(wd / "toy.cfg", kToyConfig);
  REQUIRE(run_cli("init-toy --config " + (wd / "toy.cfg") + " --seed 9 --out " +
                  (wd / "m.ckpt"))
              .exit_code == 0);
  ModelConfig other = tiny_config();
  other.d_ffn = 48;  // plan built for a different FFN width
  write_file(wd / "mismatch.json", identity_plan(other).to_json());
  auto r = run_cli("prune --ckpt " + (wd / "m.ckpt") + " --plan " +
                   (wd / "mismatch.json") + " --out " + (wd / "x.ckpt"));
  CHECK(r.exit_code == 4);
}

TEST_CASE("cli: distill divergence exits 5") {
  WorkDir wd;
  write_file(wd / "toy.cfg", kToyConfig);
  REQUIRE(run_cli("init-toy --config " + (wd / "toy.cfg") + " --seed 1 --out " +
                  (wd / "t.ckpt"))
              .exit_code == 0);
  REQUIRE(run_cli("init-toy --config " + (wd / "toy.cfg") + " --seed 2 --out " +
                  (wd / "s.ckpt"))
              .exit_code == 0);
  REQUIRE(run_cli("gen-data --vocab 48 --sequences 6 --seq-len 24 --branching 4 "
                  "--seed 3 --out " +
                  (wd / "d.bin"))
              .exit_code == 0);
  auto r = run_cli("distill --teacher " + (wd / "t.ckpt") + " --student " +
                   (wd / "s.ckpt") + " --calib " + (wd / "d.bin") + " --out " +
                   (wd / "out.ckpt") +
                   " --steps 40 --lr-start 1e9 --lr-end 1e9 "
                   "--warmup 0 --batch 2 --seq-len 8 --seed 4");
  CHECK(r.exit_code == 5);
}

TEST_CASE("cli: eval of a model against itself reports zero FKLD") {
  WorkDir wd;
  write_file(wd / "toy.cfg", kToyConfig);
  REQUIRE(run_cli("init-toy --config " + (wd / "toy.cfg") + " --seed 4 --out " +
                  (wd / "m.ckpt"))
              .exit_code == 0);
  REQUIRE(run_cli("gen-data --vocab 48 --sequences 4 --seq-len 16 --branching 4 "
                  "--seed 5 --out " +
                  (wd / "d.bin"))
              .exit_code == 0);
  auto r = run_cli("eval --ckpt " + (wd / "m.ckpt") + " --calib " + (wd / "d.bin") +
                   " --teacher " + (wd / "m.ckpt"));
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("cross_entropy=") != std::string::npos);
  CHECK(r.output.find("fkld=0.000000000") != std::string::npos);
}

TEST_CASE("cli: full toy pipeline runs end to end") {
  WorkDir wd;
  write_file(wd / "toy.cfg", kToyConfig);
  std::string data = wd / "data.bin";
  REQUIRE(run_cli("gen-data --vocab 48 --sequences 16 --seq-len 48 --branching 4 "
                  "--seed 11 --out " +
                  data)
              .exit_code == 0);
  REQUIRE(run_cli("init-toy --config " + (wd / "toy.cfg") + " --seed 12 --out " +
                  (wd / "raw.ckpt"))
              .exit_code == 0);
  REQUIRE(run_cli("train --ckpt " + (wd / "raw.ckpt") + " --calib " + data +
                  " --steps 80 --lr 0.4 --batch 4 --seq-len 16 --seed 13 --out " +
                  (wd / "teacher.ckpt"))
              .exit_code == 0);
  REQUIRE(run_cli("score --ckpt " + (wd / "teacher.ckpt") + " --calib " + data +
                  " --out " + (wd / "scores.json"))
              .exit_code == 0);

  HybridModel teacher = read_checkpoint(wd / "teacher.ckpt");
  const Index budget = param_count(teacher.config) * 6 / 10;
  REQUIRE(run_cli("search --ckpt " + (wd / "teacher.ckpt") + " --calib " + data +
                  " --budget " + std::to_string(budget) +
                  " --tolerance 0.25 --topk 2 --kd-tokens 1024 --jobs 2 "
                  "--grid-emb 12,16 --grid-ffn 12,24 --grid-heads 2,4 "
                  "--grid-channels 2,4 --seed 14 --out " +
                  (wd / "search.csv") + " --winner-plan " + (wd / "winner.json"))
              .exit_code == 0);
  std::string csv = slurp(wd / "search.csv");
  CHECK(csv.rfind("layers,emb,ffn,heads,head_channels,params,zero_shot_loss,kd_loss,"
                  "throughput_proxy\n",
                  0) == 0);

  REQUIRE(run_cli("prune --ckpt " + (wd / "teacher.ckpt") + " --plan " +
                  (wd / "winner.json") + " --out " + (wd / "student0.ckpt"))
              .exit_code == 0);
  auto pre = run_cli("eval --ckpt " + (wd / "student0.ckpt") + " --calib " + data +
                     " --teacher " + (wd / "teacher.ckpt"));
  REQUIRE(pre.exit_code == 0);

  REQUIRE(run_cli("distill --teacher " + (wd / "teacher.ckpt") + " --student " +
                  (wd / "student0.ckpt") + " --calib " + data + " --out " +
                  (wd / "student.ckpt") + " --trace " + (wd / "trace.csv") +
                  " --steps 80 --lr-start 0.4 --lr-end 0.05 --warmup 8 --batch 4 "
                  "--seq-len 16 --seed 15")
              .exit_code == 0);
  auto post = run_cli("eval --ckpt " + (wd / "student.ckpt") + " --calib " + data +
                      " --teacher " + (wd / "teacher.ckpt"));
  REQUIRE(post.exit_code == 0);

  auto fkld_of = [](const std::string& out) {
    auto pos = out.find("fkld=");
    REQUIRE(pos != std::string::npos);
    return std::stod(out.substr(pos + 5));
  };
  CHECK(fkld_of(post.output) < fkld_of(pre.output));

  std::string trace = slurp(wd / "trace.csv");
  CHECK(trace.rfind("step,lr,loss\n", 0) == 0);
}

TEST_CASE("cli: distill writes periodic checkpoints and score exports layer CSV") {
  WorkDir wd;
  write_file(wd / "toy.cfg", kToyConfig);
  REQUIRE(run_cli("init-toy --config " + (wd / "toy.cfg") + " --seed 6 --out " +
                  (wd / "t.ckpt"))
              .exit_code == 0);
  REQUIRE(run_cli("gen-data --vocab 48 --sequences 6 --seq-len 24 --branching 4 "
                  "--seed 7 --out " +
                  (wd / "d.bin"))
              .exit_code == 0);
  REQUIRE(run_cli("distill --teacher " + (wd / "t.ckpt") + " --student " +
                  (wd / "t.ckpt") + " --calib " + (wd / "d.bin") + " --out " +
                  (wd / "out.ckpt") +
                  " --steps 25 --lr-start 0.2 --lr-end 0.02 --warmup 2 --batch 2 "
                  "--seq-len 8 --seed 8 --checkpoint-every 10")
              .exit_code == 0);
  CHECK_NOTHROW(read_checkpoint(wd / "out.ckpt.step10"));
  CHECK_NOTHROW(read_checkpoint(wd / "out.ckpt.step20"));
  CHECK_NOTHROW(read_checkpoint(wd / "out.ckpt"));

  REQUIRE(run_cli("score --ckpt " + (wd / "t.ckpt") + " --calib " + (wd / "d.bin") +
                  " --metrics layer_kld --out " + (wd / "s.json") + " --csv " +
                  (wd / "kld.csv"))
              .exit_code == 0);
  std::string csv = slurp(wd / "kld.csv");
  CHECK(csv.rfind("layer,kind,kld\n", 0) == 0);
  CHECK(csv.find("0,mamba,") != std::string::npos);
  CHECK(csv.find("1,attention,") != std::string::npos);
  CHECK(csv.find("2,ffn,") != std::string::npos);
}

TEST_CASE("cli: commands are idempotent given identical inputs and seeds") {
  WorkDir wd;
  write_file(wd / "toy.cfg", kToyConfig);
  std::string data = wd / "d.bin";
  REQUIRE(run_cli("gen-data --vocab 48 --sequences 6 --seq-len 24 --branching 4 "
                  "--seed 21 --out " +
                  data)
              .exit_code == 0);
  REQUIRE(run_cli("init-toy --config " + (wd / "toy.cfg") + " --seed 22 --out " +
                  (wd / "m.ckpt"))
              .exit_code == 0);
  for (const char* out : {"p1.ckpt", "p2.ckpt"}) {
    REQUIRE(run_cli("score --ckpt " + (wd / "m.ckpt") + " --calib " + data + " --out " +
                    (wd / (std::string(out) + ".scores.json")))
                .exit_code == 0);
    REQUIRE(run_cli("prune --ckpt " + (wd / "m.ckpt") + " --scores " +
                    (wd / (std::string(out) + ".scores.json")) +
                    " --keep-ffn 12 --keep-channels 3 --out " + (wd / out))
                .exit_code == 0);
  }
  CHECK(slurp(wd / "p1.ckpt") == slurp(wd / "p2.ckpt"));
}

TEST_CASE("cli: distill reads KD config files, explicit flags win") {
  WorkDir wd;
  write_file(wd / "toy.cfg", kToyConfig);
  write_file(wd / "kd.cfg",
             "tau = 1.0\nlr_start = 0.2\nlr_end = 0.02\nwarmup_steps = 2\n"
             "total_steps = 30\nbatch_size = 2\nseq_len = 8\nseed = 40\n");
  REQUIRE(run_cli("init-toy --config " + (wd / "toy.cfg") + " --seed 6 --out " +
                  (wd / "t.ckpt"))
              .exit_code == 0);
  REQUIRE(run_cli("gen-data --vocab 48 --sequences 6 --seq-len 24 --branching 4 "
                  "--seed 7 --out " +
                  (wd / "d.bin"))
              .exit_code == 0);
  REQUIRE(run_cli("distill --teacher " + (wd / "t.ckpt") + " --student " +
                  (wd / "t.ckpt") + " --calib " + (wd / "d.bin") + " --out " +
                  (wd / "out.ckpt") + " --trace " + (wd / "tr.csv") + " --config " +
                  (wd / "kd.cfg") + " --steps 10")
              .exit_code == 0);
  // 10 steps from the flag, everything else from the file.
  std::string trace = slurp(wd / "tr.csv");
  int rows = -1;  // minus the header
  for (char ch : trace) rows += ch == '\n';
  CHECK(rows == 10);
}

TEST_CASE("cli: compare-metrics emits both metric columns") {
  WorkDir wd;
  write_file(wd / "toy.cfg", kToyConfig);
  std::string data = wd / "d.bin";
  REQUIRE(run_cli("gen-data --vocab 48 --sequences 6 --seq-len 24 --branching 4 "
                  "--seed 31 --out " +
                  data)
              .exit_code == 0);
  REQUIRE(run_cli("init-toy --config " + (wd / "toy.cfg") + " --seed 32 --out " +
                  (wd / "m.ckpt"))
              .exit_code == 0);
  REQUIRE(run_cli("compare-metrics --ckpt " + (wd / "m.ckpt") + " --calib " + data +
                  " --axis ffn --values 8,16 --out " + (wd / "cmp.csv"))
              .exit_code == 0);
  std::string csv = slurp(wd / "cmp.csv");
  CHECK(csv.rfind("axis,value,l2_loss,flap_loss\n", 0) == 0);
  CHECK(csv.find("ffn,8,") != std::string::npos);
  CHECK(csv.find("ffn,16,") != std::string::npos);

  REQUIRE(run_cli("sweep-mamba --ckpt " + (wd / "m.ckpt") + " --calib " + data +
                  " --axis channels --values 2,4 --out " + (wd / "sweep.csv"))
              .exit_code == 0);
  CHECK(slurp(wd / "sweep.csv")
            .rfind("axis,value,zero_shot_loss,params,throughput_proxy\n", 0) == 0);
}
