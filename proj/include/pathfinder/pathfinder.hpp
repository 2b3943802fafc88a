#pragma once
// Everything except the FFTW-backed phase correlation, which needs linking.

#include "pathfinder/bitcore.hpp"
#include "pathfinder/checkpoint.hpp"
#include "pathfinder/config.hpp"
#include "pathfinder/dataset.hpp"
#include "pathfinder/geom.hpp"
#include "pathfinder/image_io.hpp"
#include "pathfinder/losses.hpp"
#include "pathfinder/metrics.hpp"
#include "pathfinder/network.hpp"
#include "pathfinder/osmmaker.hpp"
