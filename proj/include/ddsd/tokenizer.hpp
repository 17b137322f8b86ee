#pragma once

// Byte-level tokenizer.
//
// Transcripts are treated as raw bytes: token ids 0..255 are the byte
// values themselves, so there is no vocabulary to learn or store and any
// UTF-8 string round-trips. Four control tokens sit above the byte range.

#include <cstdint>
#include <string>
#include <vector>

#include "ddsd/common.hpp"

namespace ddsd {

struct Tokens {
  static constexpr int kPad = 256;  // padding, never attended to as a key
  static constexpr int kSep = 257;  // decision-readout position
  static constexpr int kYes = 258;  // "device-directed" label token
  static constexpr int kNo = 259;   // "non-directed" label token
  static constexpr int kVocabSize = 260;
};

struct TokenSequence {
  std::vector<std::int32_t> ids;
  // Number of leading real (transcript) tokens; the rest, if any, is PAD.
  std::size_t real_len = 0;
};

inline bool is_special_token(std::int32_t id) { return id >= 256; }

class ByteTokenizer {
public:
  int vocab_size() const { return Tokens::kVocabSize; }

  // Every byte maps to its own id; no escaping, no merges.
  TokenSequence encode(const std::string& text) const {
    TokenSequence seq;
    seq.ids.reserve(text.size());
    for (unsigned char c : text) seq.ids.push_back(static_cast<std::int32_t>(c));
    seq.real_len = seq.ids.size();
    return seq;
  }

  // Inverse of encode on byte ids; control tokens are dropped, not rendered.
  std::string decode(const std::vector<std::int32_t>& ids) const {
    std::string out;
    out.reserve(ids.size());
    for (std::int32_t id : ids) {
      if (id < 0 || id >= Tokens::kVocabSize)
        throw ValidationError("token id out of range in decode: " + std::to_string(id));
      if (id < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return out;
  }

  // Fix the sequence length to exactly `target_len`: truncate long
  // transcripts, right-pad short ones with PAD. real_len tracks the number
  // of surviving transcript tokens so downstream masking can ignore PAD.
  TokenSequence pad_tokens(const TokenSequence& seq, std::size_t target_len) const {
    if (seq.real_len != seq.ids.size())
      throw ValidationError("pad_tokens expects an unpadded sequence");
    TokenSequence out;
    out.ids.assign(target_len, Tokens::kPad);
    const std::size_t keep = std::min(seq.ids.size(), target_len);
    for (std::size_t i = 0; i < keep; ++i) out.ids[i] = seq.ids[i];
    out.real_len = keep;
    return out;
  }
};

}  // namespace ddsd
