#pragma once

#include "mimo_lab/channel.hpp"
#include "mimo_lab/constellation.hpp"
#include "mimo_lab/detect.hpp"
#include "mimo_lab/eccn.hpp"
#include "mimo_lab/error.hpp"
#include "mimo_lab/experiment.hpp"
#include "mimo_lab/fec.hpp"
#include "mimo_lab/linalg.hpp"
#include "mimo_lab/matrix_io.hpp"
#include "mimo_lab/metrics.hpp"
#include "mimo_lab/parallel.hpp"
#include "mimo_lab/quadrature.hpp"
#include "mimo_lab/rng.hpp"
#include "mimo_lab/schemes.hpp"
