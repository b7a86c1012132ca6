#pragma once

#include "sdabc/core.hpp"
#include "sdabc/models.hpp"
#include "sdabc/kernels.hpp"
#include "sdabc/stratify.hpp"
#include "sdabc/smc.hpp"
#include "sdabc/bench.hpp"
