#pragma once

#include <string>

#include "a5/network.hpp"

namespace a5 {

// Checkpoint file layout:
//   bytes 0..7   magic "A5CKPT01"
//   bytes 8..11  u32 little-endian manifest length L
//   bytes 12..   UTF-8 JSON manifest (L bytes): version, dtype, input shape,
//                layer specs, and the parameter blob order with shapes
//   then         the parameter tensors as little-endian f64, concatenated in
//                manifest order
// Loading validates magic, version, dtype, layer-chain consistency, declared
// shapes, and that the payload byte count matches the manifest exactly.
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

}  // namespace a5
