#pragma once

#include "bluetrack/error.hpp"
#include "bluetrack/protocol.hpp"
#include "bluetrack/localization.hpp"
#include "bluetrack/calibration.hpp"
#include "bluetrack/rng.hpp"
#include "bluetrack/sim.hpp"
#include "bluetrack/monitor.hpp"
#include "bluetrack/cms.hpp"
