/**
 * @file dfrf.hpp
 * @brief Umbrella header for the segmentation library. The HTTP service lives
 * in service.hpp and is not included here.
 */
#pragma once

#include "bench.hpp"
#include "core.hpp"
#include "encoding.hpp"
#include "inference.hpp"
#include "mixture.hpp"
#include "png_io.hpp"
#include "synth.hpp"
#include "unary.hpp"
