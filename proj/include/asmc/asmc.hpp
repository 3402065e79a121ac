#ifndef ASMC_ASMC_HPP
#define ASMC_ASMC_HPP

#include "adaptation.hpp"
#include "engine.hpp"
#include "experiments.hpp"
#include "error.hpp"
#include "ess.hpp"
#include "interaction.hpp"
#include "model.hpp"
#include "model_io.hpp"
#include "numeric.hpp"
#include "oracles.hpp"
#include "random.hpp"

#endif  // ASMC_ASMC_HPP
