#pragma once

/// Umbrella header for the whole toolkit.

#include "cislunar/core.hpp"
#include "cislunar/cr3bp.hpp"
#include "cislunar/ephemeris.hpp"
#include "cislunar/hfem.hpp"
#include "cislunar/frames.hpp"
#include "cislunar/integrate.hpp"
#include "cislunar/orbits.hpp"
#include "cislunar/transfer.hpp"
#include "cislunar/shooting.hpp"
#include "cislunar/solvers.hpp"
#include "cislunar/io.hpp"
#include "cislunar/config.hpp"
#include "cislunar/scenario.hpp"
