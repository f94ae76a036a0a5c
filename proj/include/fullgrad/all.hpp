#pragma once

// Convenience include for the whole library.

#include "fullgrad/baselines.hpp"
#include "fullgrad/dataset.hpp"
#include "fullgrad/evalharness.hpp"
#include "fullgrad/fullgrad.hpp"
#include "fullgrad/grads.hpp"
#include "fullgrad/image_io.hpp"
#include "fullgrad/methods.hpp"
#include "fullgrad/model_io.hpp"
#include "fullgrad/network.hpp"
#include "fullgrad/presets.hpp"
#include "fullgrad/random.hpp"
#include "fullgrad/tensor.hpp"
