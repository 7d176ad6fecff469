#pragma once

#include "sae/errors.hpp"
#include "sae/random.hpp"
#include "sae/linking.hpp"
#include "sae/model.hpp"
#include "sae/estimators.hpp"
#include "sae/quantile.hpp"
#include "sae/intervals.hpp"
#include "sae/pivot.hpp"
#include "sae/parallel.hpp"
#include "sae/bootstrap.hpp"
#include "sae/harness.hpp"
#include "sae/io.hpp"
