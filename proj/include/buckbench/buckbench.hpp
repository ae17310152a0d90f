#pragma once

#include "buckbench/analysis.hpp"
#include "buckbench/config.hpp"
#include "buckbench/control.hpp"
#include "buckbench/csv.hpp"
#include "buckbench/dynamics.hpp"
#include "buckbench/engine.hpp"
#include "buckbench/errors.hpp"
#include "buckbench/model.hpp"
