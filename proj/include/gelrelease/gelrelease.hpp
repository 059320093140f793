#pragma once

// Umbrella header.

#include <gelrelease/banded.hpp>
#include <gelrelease/drug_transport.hpp>
#include <gelrelease/equilibrium.hpp>
#include <gelrelease/error.hpp>
#include <gelrelease/gel_solver.hpp>
#include <gelrelease/grid.hpp>
#include <gelrelease/io.hpp>
#include <gelrelease/optimizer.hpp>
#include <gelrelease/parallel.hpp>
#include <gelrelease/params.hpp>
#include <gelrelease/pipeline.hpp>
#include <gelrelease/qp.hpp>
