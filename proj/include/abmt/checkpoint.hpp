#pragma once

#include <string>

#include "abmt/encoder.hpp"

namespace abmt {

// Binary key->array checkpoint: a JSON header with the config echo and array
// manifest, then the raw little-endian doubles of every parameter in manifest
// order. save(load(path)) reproduces the file byte for byte.
void save_encoder(const EncoderState& state, const std::string& path);
EncoderState load_encoder(const std::string& path);

}  // namespace abmt
