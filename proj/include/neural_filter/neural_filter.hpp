#pragma once

#include "neural_filter/config.hpp"
#include "neural_filter/csv.hpp"
#include "neural_filter/dynamics.hpp"
#include "neural_filter/error.hpp"
#include "neural_filter/experiment.hpp"
#include "neural_filter/filter.hpp"
#include "neural_filter/mlp.hpp"
#include "neural_filter/training.hpp"
