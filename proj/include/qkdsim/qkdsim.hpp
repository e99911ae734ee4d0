#pragma once

#include "qkdsim/errors.hpp"
#include "qkdsim/core_model.hpp"
#include "qkdsim/parallel.hpp"
#include "qkdsim/link_model.hpp"
#include "qkdsim/optimizer.hpp"
#include "qkdsim/presets.hpp"
#include "qkdsim/tags.hpp"
#include "qkdsim/profile.hpp"
#include "qkdsim/event_sim.hpp"
#include "qkdsim/sync.hpp"
#include "qkdsim/toeplitz.hpp"
#include "qkdsim/keyproc.hpp"
#include "qkdsim/satpass.hpp"
#include "qkdsim/scenario.hpp"
#include "qkdsim/io.hpp"
