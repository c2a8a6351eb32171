#pragma once

#include "ldpnas/ats.hpp"
#include "ldpnas/evaluator.hpp"
#include "ldpnas/net_graph.hpp"
#include "ldpnas/objective.hpp"
#include "ldpnas/param_io.hpp"
#include "ldpnas/reports.hpp"
#include "ldpnas/run_config.hpp"
#include "ldpnas/search_space.hpp"
#include "ldpnas/spec.hpp"
#include "ldpnas/toy_task.hpp"
#include "ldpnas/zerocost.hpp"
