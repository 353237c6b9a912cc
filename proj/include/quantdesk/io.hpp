// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "quantdesk/blockquant.hpp"
#include "quantdesk/tensor.hpp"

namespace quantdesk {

// Tensor container file: an 8-byte little-endian header length, a one-line
// JSON header ({"element_type": "f32"|"f64"|"codes", "shape": [r, c], ...}),
// then the raw little-endian payload. Round-trips are lossless and the bytes
// are identical across platforms.

void write_tensor(const Matrix& m, const std::string& path, const std::string& element_type = "f64");
Matrix read_tensor(const std::string& path);

// MicroBlockTensor containers use element_type "codes" with the layout,
// selection, and global-scale bits carried in the header, followed by the
// element-code payload and the block-scale payload.
void write_container(const MicroBlockTensor& q, const std::string& path);
MicroBlockTensor read_container(const std::string& path);

}  // namespace quantdesk
