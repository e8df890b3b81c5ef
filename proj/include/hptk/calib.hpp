#ifndef HPTK_CALIB_HPP
#define HPTK_CALIB_HPP

#include <string>

#include "hptk/importance.hpp"

namespace hptk {

// Calibration token file: magic "HPTK", one version byte (1), an 8-byte
// little-endian sequence count, then per sequence an 8-byte little-endian
// token count followed by 32-bit little-endian token ids.

void write_calib(const std::string& path, const CalibSet& sequences);
CalibSet read_calib(const std::string& path);

/// First-order Markov chain over `vocab` tokens: each token has `branching`
/// successors with mildly non-uniform transition weights, all drawn from the
/// seed. Deterministic.
CalibSet gen_markov_sequences(Index vocab, Index n_sequences, Index seq_len,
                              Index branching, std::uint64_t seed);

}  // namespace hptk

#endif
