#pragma once

#include "errors.hpp"
#include "grid.hpp"
#include "model.hpp"
#include "simulation.hpp"
#include "kernel.hpp"
#include "diagnostics.hpp"
#include "deeponet.hpp"
#include "controller.hpp"
#include "dataset.hpp"
#include "config.hpp"
#include "bench.hpp"
#include "report.hpp"
