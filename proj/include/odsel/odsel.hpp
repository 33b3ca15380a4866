#pragma once

// Umbrella header.

#include "odsel/checker.hpp"
#include "odsel/csv.hpp"
#include "odsel/frame.hpp"
#include "odsel/manifest.hpp"
#include "odsel/mme.hpp"
#include "odsel/model.hpp"
#include "odsel/pedigree.hpp"
#include "odsel/relmat.hpp"
#include "odsel/rng.hpp"
#include "odsel/search.hpp"
#include "odsel/simulate.hpp"
#include "odsel/stages.hpp"
#include "odsel/toml.hpp"
#include "odsel/version.hpp"
