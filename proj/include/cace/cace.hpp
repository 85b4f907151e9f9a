#pragma once

#include "cace/errors.hpp"
#include "cace/random.hpp"
#include "cace/distributions.hpp"
#include "cace/data.hpp"
#include "cace/stratum_models.hpp"
#include "cace/outcome_models.hpp"
#include "cace/gibbs.hpp"
#include "cace/diagnostics.hpp"
#include "cace/simulation.hpp"
#include "cace/io.hpp"
