#pragma once

#include "voldepth/config.hpp"
#include "voldepth/difftape.hpp"
#include "voldepth/experiment.hpp"
#include "voldepth/frame.hpp"
#include "voldepth/geometry.hpp"
#include "voldepth/grid.hpp"
#include "voldepth/harness.hpp"
#include "voldepth/io.hpp"
#include "voldepth/losses.hpp"
#include "voldepth/metrics.hpp"
#include "voldepth/regularization.hpp"
#include "voldepth/rendering.hpp"
#include "voldepth/scene.hpp"
