#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

#include "helpers.hpp"
#include "hptk/calib.hpp"
#include "hptk/checkpoint.hpp"
#include "hptk/config_file.hpp"

using namespace hptk;
using namespace hptk::testutil;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

struct TempPath {
  std::string path;
  explicit TempPath(const std::string& name) {
    path = std::string("/tmp/hptk_test_") + std::to_string(::getpid()) + "_" + name;
  }
  ~TempPath() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("checkpoint round trip preserves config and payloads") {
  ModelConfig c = tiny_config();
  HybridModel m = init_model(c, 7);
  TempPath p("ckpt_roundtrip");
  write_checkpoint(p.path, m);
  HybridModel back = read_checkpoint(p.path);
  CHECK(back.config == m.config);
  CHECK(model_checksum(back) == model_checksum(m));
}

TEST_CASE("checkpoints from the same model are byte-identical") {
  ModelConfig c = tiny_config();
  HybridModel a = init_model(c, 9);
  HybridModel b = init_model(c, 9);
  TempPath pa("ckpt_a"), pb("ckpt_b");
  write_checkpoint(pa.path, a);
  write_checkpoint(pb.path, b);
  CHECK(slurp(pa.path) == slurp(pb.path));
}

TEST_CASE("checkpoint container layout is as documented") {
  ModelConfig c = tiny_config();
  HybridModel m = init_model(c, 11);
  TempPath p("ckpt_layout");
  write_checkpoint(p.path, m);
  std::string blob = slurp(p.path);
  REQUIRE(blob.size() > 8);

  // 8-byte little-endian header length, then UTF-8 JSON.
  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) {
    header_len |= static_cast<std::uint64_t>(
                      static_cast<unsigned char>(blob[static_cast<size_t>(i)]))
                  << (8 * i);
  }
  REQUIRE(8 + header_len < blob.size());
  const std::string header_text = blob.substr(8, header_len);
  auto header = nlohmann::ordered_json::parse(header_text);
  CHECK(header.at("format") == "hptk.ckpt");
  CHECK(header.at("config").at("d_e") == c.d_e);
  CHECK(header.at("tensors").contains("embedding"));
  CHECK(header.at("tensors").at("embedding").at("dtype") == "f64");

  // Payload offsets are relative to the end of the header; read the
  // embedding back straight from the raw bytes.
  const size_t payload_base = 8 + header_len;
  const std::uint64_t off = header.at("tensors").at("embedding").at("offset");
  const std::uint64_t len = header.at("tensors").at("embedding").at("length");
  REQUIRE(len == static_cast<std::uint64_t>(m.embedding.numel()) * 8);
  std::vector<double> raw(static_cast<size_t>(m.embedding.numel()));
  std::memcpy(raw.data(), blob.data() + payload_base + off, static_cast<size_t>(len));
  for (Index i = 0; i < m.embedding.numel(); ++i) CHECK(raw[static_cast<size_t>(i)] == m.embedding.at(i));

  // Directory order equals payload order (offsets strictly increase).
  std::uint64_t prev_end = 0;
  for (const auto& [name, entry] : header.at("tensors").items()) {
    const std::uint64_t entry_off = entry.at("offset").template get<std::uint64_t>();
    const std::uint64_t entry_len = entry.at("length").template get<std::uint64_t>();
    CHECK(entry_off == prev_end);
    prev_end = entry_off + entry_len;
  }
}

TEST_CASE("checkpoint reader rejects malformed containers") {
  TempPath p("ckpt_bad");
  std::ofstream out(p.path, std::ios::binary);
  out << "not a checkpoint";
  out.close();
  CHECK_THROWS_AS(read_checkpoint(p.path), IoError);
  CHECK_THROWS_AS(read_checkpoint("/nonexistent/path.ckpt"), IoError);
}

TEST_CASE("calibration file round trip") {
  CalibSet data{{1, 2, 3}, {}, {65535, 0, 7, 7}};
  TempPath p("calib_roundtrip");
  write_calib(p.path, data);
  CalibSet back = read_calib(p.path);
  REQUIRE(back.size() == data.size());
  CHECK(back[0] == data[0]);
  CHECK(back[1].empty());
  CHECK(back[2] == data[2]);
}

TEST_CASE("calibration file layout: magic, version, counts") {
  CalibSet data{{9, 8}};
  TempPath p("calib_layout");
  write_calib(p.path, data);
  std::string blob = slurp(p.path);
  REQUIRE(blob.size() == 4 + 1 + 8 + 8 + 2 * 4);
  CHECK(blob.compare(0, 4, "HPTK") == 0);
  CHECK(blob[4] == 1);
  CHECK(static_cast<unsigned char>(blob[5]) == 1);  // sequence count LE
  CHECK(static_cast<unsigned char>(blob[13]) == 2);  // token count LE
  CHECK(static_cast<unsigned char>(blob[21]) == 9);  // first token id LE
}

TEST_CASE("calibration reader rejects foreign files") {
  TempPath p("calib_bad");
  std::ofstream out(p.path, std::ios::binary);
  out << "HPTZ____________";
  out.close();
  CHECK_THROWS_AS(read_calib(p.path), IoError);
}

TEST_CASE("markov generator is deterministic and respects its parameters") {
  CalibSet a = gen_markov_sequences(32, 6, 50, 4, 77);
  CalibSet b = gen_markov_sequences(32, 6, 50, 4, 77);
  CHECK(a == b);
  CalibSet c = gen_markov_sequences(32, 6, 50, 4, 78);
  CHECK(a != c);

  // Every token in range; each token has at most `branching` successors.
  std::vector<std::set<Index>> successors(32);
  for (const TokenSeq& seq : a) {
    REQUIRE(seq.size() == 50);
    for (size_t t = 0; t < seq.size(); ++t) {
      REQUIRE(seq[t] >= 0);
      REQUIRE(seq[t] < 32);
      if (t > 0) successors[static_cast<size_t>(seq[t - 1])].insert(seq[t]);
    }
  }
  for (const auto& s : successors) CHECK(s.size() <= 4);
  CHECK_THROWS_AS(gen_markov_sequences(8, 1, 4, 9, 1), ParameterError);
}

TEST_CASE("config files parse the documented keys") {
  ConfigFile cf = ConfigFile::parse(
      "# model\n"
      "layer_pattern = MAF\n"
      "d_e = 16\n"
      "d_ffn = 32   # inline comment\n"
      "m_h = 4\n"
      "m_d = 4\n"
      "g = 2\n"
      "d_s = 8\n"
      "n_att_heads = 2\n"
      "vocab = 64\n"
      "conv_k = 4\n");
  ModelConfig c = model_config_from_file(cf);
  CHECK(pattern_to_string(c.layer_pattern) == "MAF");
  CHECK(c.d_e == 16);
  CHECK(c.vocab == 64);
  CHECK(c.attention_width() == 16);
}

TEST_CASE("config files reject broken input") {
  CHECK_THROWS_AS(ConfigFile::parse("novalue\n"), ConfigError);
  ConfigFile missing = ConfigFile::parse("layer_pattern = M\n");
  CHECK_THROWS_AS(model_config_from_file(missing), ConfigError);

  ConfigFile bad_div = ConfigFile::parse(
      "layer_pattern = M\nd_e = 16\nd_ffn = 32\nm_h = 5\nm_d = 4\ng = 2\nd_s = 8\n"
      "n_att_heads = 2\nvocab = 64\n");
  CHECK_THROWS_AS(model_config_from_file(bad_div), ConfigError);

  ConfigFile bad_layers = ConfigFile::parse(
      "layer_pattern = MA\nn_layers = 3\nd_e = 16\nd_ffn = 32\nm_h = 4\nm_d = 4\n"
      "g = 2\nd_s = 8\nn_att_heads = 2\nvocab = 64\n");
  CHECK_THROWS_AS(model_config_from_file(bad_layers), ConfigError);
}

TEST_CASE("kd config file keys with defaults") {
  KDConfig defaults;
  defaults.lr_start = 0.5;
  defaults.lr_end = 0.05;
  defaults.total_steps = 100;
  defaults.batch_size = 2;
  defaults.seq_len = 8;
  KDConfig kd = kd_config_from_file(
      ConfigFile::parse("tau = 2.0\nlr_start = 0.25\nwarmup_steps = 5\n"), defaults);
  CHECK(kd.tau == 2.0);
  CHECK(kd.lr_start == 0.25);
  CHECK(kd.lr_end == 0.05);
  CHECK(kd.warmup_steps == 5);
  CHECK(kd.total_steps == 100);
}

TEST_CASE("model config JSON round trip") {
  ModelConfig c = tiny_config();
  c.d_att = 32;
  ModelConfig back = model_config_from_json(model_config_to_json(c));
  CHECK(back == c);
}
