#pragma once

// Spatially varying coefficient models for imaging data: voxel-wise least
// squares, functional PCA of the residual process, multiscale adaptive
// smoothing, Wald inference, baselines, simulation and file I/O.

#include "svcm/errors.hpp"
#include "svcm/parallel.hpp"
#include "svcm/volume.hpp"
#include "svcm/design.hpp"
#include "svcm/lsq.hpp"
#include "svcm/chi2.hpp"
#include "svcm/fpca.hpp"
#include "svcm/mass.hpp"
#include "svcm/infer.hpp"
#include "svcm/baselines.hpp"
#include "svcm/simulate.hpp"
#include "svcm/io.hpp"
#include "svcm/pipeline.hpp"
