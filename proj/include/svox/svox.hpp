#pragma once

#include "svox/baseline.hpp"
#include "svox/inference.hpp"
#include "svox/metrics.hpp"
#include "svox/model.hpp"
#include "svox/phantom.hpp"
#include "svox/sampler.hpp"
#include "svox/tensor.hpp"
#include "svox/trainer.hpp"
#include "svox/volume.hpp"
#include "svox/volume_io.hpp"

namespace svox {
inline constexpr const char* kVersion = "0.1.0";
}
