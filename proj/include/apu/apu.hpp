// Convenience umbrella: pulls in the whole library.

#pragma once

#include "apu/ask.hpp"
#include "apu/body.hpp"
#include "apu/denoise.hpp"
#include "apu/digest.hpp"
#include "apu/dual.hpp"
#include "apu/error.hpp"
#include "apu/gmm.hpp"
#include "apu/gradcheck.hpp"
#include "apu/losses.hpp"
#include "apu/optimize.hpp"
#include "apu/pipeline.hpp"
#include "apu/prior.hpp"
#include "apu/provider.hpp"
#include "apu/rng.hpp"
#include "apu/rotation.hpp"
#include "apu/synth.hpp"
#include "apu/taxonomy.hpp"
#include "apu/vec3.hpp"
