#pragma once

#include "nstab/flow.hpp"
#include "nstab/functional.hpp"
#include "nstab/gallery.hpp"
#include "nstab/inner.hpp"
#include "nstab/integrator.hpp"
#include "nstab/lowrank.hpp"
#include "nstab/matrix_market.hpp"
#include "nstab/outer.hpp"
#include "nstab/spectrum.hpp"
#include "nstab/structure.hpp"
#include "nstab/types.hpp"
