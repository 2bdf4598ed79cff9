// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout: magic "DPNN", u16 version, u32 manifest length, JSON
// manifest [{name, shape, trainable}], then each tensor's values as
// little-endian float64 in manifest order.
#pragma once

#include <iosfwd>

#include "dstyle/nn/parameter_store.hpp"

namespace dstyle::nn {

void save_checkpoint(std::ostream& out, const ParameterStore& store);

/// Loads into an already-built store. Every name and shape must match.
void load_checkpoint(std::istream& in, ParameterStore& store);

}  // namespace dstyle::nn
