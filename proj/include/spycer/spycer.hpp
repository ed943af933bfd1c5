#pragma once

#include "spycer/baselines.hpp"
#include "spycer/checkpoint.hpp"
#include "spycer/config.hpp"
#include "spycer/error.hpp"
#include "spycer/eval.hpp"
#include "spycer/gradcheck.hpp"
#include "spycer/grid.hpp"
#include "spycer/model.hpp"
#include "spycer/optim.hpp"
#include "spycer/parallel.hpp"
#include "spycer/physics.hpp"
#include "spycer/scene_io.hpp"
#include "spycer/sim.hpp"
#include "spycer/tensor.hpp"
#include "spycer/train.hpp"
