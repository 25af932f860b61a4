// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

// Umbrella header for the numerical core. The harness headers under
// sdpo/harness/ additionally need vendor/json.hpp.

#pragma once

#include "sdpo/analysis.hpp"
#include "sdpo/data.hpp"
#include "sdpo/diffusion.hpp"
#include "sdpo/network.hpp"
#include "sdpo/param_io.hpp"
#include "sdpo/preference.hpp"
#include "sdpo/rng.hpp"
#include "sdpo/safeguard.hpp"
#include "sdpo/schedule.hpp"
