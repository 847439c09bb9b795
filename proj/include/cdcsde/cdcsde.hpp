#pragma once

// Umbrella header.

#include "cdcsde/core.hpp"
#include "cdcsde/stream.hpp"
#include "cdcsde/models/adam.hpp"
#include "cdcsde/models/mlp.hpp"
#include "cdcsde/models/autoencoder.hpp"
#include "cdcsde/models/spn.hpp"
#include "cdcsde/models/kfac.hpp"
#include "cdcsde/models/serialize.hpp"
#include "cdcsde/signals.hpp"
#include "cdcsde/control.hpp"
#include "cdcsde/baselines.hpp"
#include "cdcsde/serving.hpp"
#include "cdcsde/evaluation.hpp"
#include "cdcsde/experiment/config.hpp"
#include "cdcsde/experiment/runner.hpp"
