#pragma once

#include "mtta/fd.hpp"

namespace mtta::testing {
using namespace mtta::fd;
}  // namespace mtta::testing
