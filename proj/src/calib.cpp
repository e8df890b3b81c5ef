#include "hptk/calib.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace hptk {

namespace {

constexpr char kMagic[4] = {'H', 'P', 'T', 'K'};
constexpr unsigned char kVersion = 1;

void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::uint32_t read_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void write_calib(const std::string& path, const CalibSet& sequences) {
  std::string blob;
  blob.append(kMagic, 4);
  blob.push_back(static_cast<char>(kVersion));
  append_u64_le(blob, sequences.size());
  for (const TokenSeq& seq : sequences) {
    append_u64_le(blob, seq.size());
    for (Index id : seq) {
      if (id < 0 || id > 0xffffffffll) {
        throw InputError("write_calib: token id does not fit in 32 bits");
      }
      append_u32_le(blob, static_cast<std::uint32_t>(id));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("write_calib: cannot open " + path);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("write_calib: short write to " + path);
}

CalibSet read_calib(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_calib: cannot open " + path);
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(blob.data());
  if (blob.size() < 13 || std::memcmp(blob.data(), kMagic, 4) != 0) {
    throw IoError("read_calib: not an HPTK calibration file");
  }
  if (p[4] != kVersion) throw IoError("read_calib: unsupported version");
  std::uint64_t count = read_u64_le(p + 5);
  size_t pos = 13;
  CalibSet out;
  out.reserve(static_cast<size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    if (pos + 8 > blob.size()) throw IoError("read_calib: truncated sequence header");
    std::uint64_t len = read_u64_le(p + pos);
    pos += 8;
    if (pos + 4 * len > blob.size()) throw IoError("read_calib: truncated sequence body");
    TokenSeq seq(static_cast<size_t>(len));
    for (std::uint64_t t = 0; t < len; ++t) {
      seq[static_cast<size_t>(t)] = static_cast<Index>(read_u32_le(p + pos));
      pos += 4;
    }
    out.push_back(std::move(seq));
  }
  return out;
}

CalibSet gen_markov_sequences(Index vocab, Index n_sequences, Index seq_len,
                              Index branching, std::uint64_t seed) {
  if (vocab < 2 || n_sequences < 1 || seq_len < 1) {
    throw ParameterError("gen_markov_sequences: vocab/sequences/length must be positive");
  }
  if (branching < 1 || branching > vocab) {
    throw ParameterError("gen_markov_sequences: branching must be in [1, vocab]");
  }
  Rng rng(seed);
  // Successor table and cumulative transition weights per token.
  std::vector<std::vector<Index>> successors(static_cast<size_t>(vocab));
  std::vector<std::vector<double>> cumulative(static_cast<size_t>(vocab));
  for (Index v = 0; v < vocab; ++v) {
    std::vector<Index> succ;
    succ.reserve(static_cast<size_t>(branching));
    while (static_cast<Index>(succ.size()) < branching) {
      Index cand = rng.index(vocab);
      if (std::find(succ.begin(), succ.end(), cand) == succ.end()) succ.push_back(cand);
    }
    std::vector<double> weights(static_cast<size_t>(branching));
    double total = 0.0;
    for (double& w : weights) {
      w = rng.uniform(0.5, 1.5);
      total += w;
    }
    double acc = 0.0;
    std::vector<double> cum(static_cast<size_t>(branching));
    for (size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i] / total;
      cum[i] = acc;
    }
    cum.back() = 1.0;
    successors[static_cast<size_t>(v)] = std::move(succ);
    cumulative[static_cast<size_t>(v)] = std::move(cum);
  }

  CalibSet out;
  out.reserve(static_cast<size_t>(n_sequences));
  for (Index s = 0; s < n_sequences; ++s) {
    TokenSeq seq;
    seq.reserve(static_cast<size_t>(seq_len));
    Index cur = rng.index(vocab);
    seq.push_back(cur);
    for (Index t = 1; t < seq_len; ++t) {
      const double u = rng.uniform();
      const auto& cum = cumulative[static_cast<size_t>(cur)];
      size_t pick = 0;
      while (pick + 1 < cum.size() && u > cum[pick]) ++pick;
      cur = successors[static_cast<size_t>(cur)][pick];
      seq.push_back(cur);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace hptk
