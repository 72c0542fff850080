#pragma once

#include <string>

#include "exvae/numerics.hpp"

namespace exvae {

// Binary checkpoint container.
//
//   "EXVC" | version u8 (=1) | block count u32
//   per block: name length u16 | name bytes | rows u32 | cols u32
//              | rows*cols float64, row-major
//
// All integers and floats little-endian. Blocks keep their insertion order,
// so re-saving a loaded tree is byte-identical.
void save_blocks(const std::string& path, const ParamTree& tree);
ParamTree load_blocks(const std::string& path);

} // namespace exvae
