#pragma once

#include "magnet/adam.hpp"
#include "magnet/baselines.hpp"
#include "magnet/cli.hpp"
#include "magnet/dynamics.hpp"
#include "magnet/evaluate.hpp"
#include "magnet/io.hpp"
#include "magnet/model.hpp"
#include "magnet/nn.hpp"
#include "magnet/random.hpp"
#include "magnet/standardize.hpp"
#include "magnet/tape.hpp"
#include "magnet/tensor.hpp"
#include "magnet/training.hpp"
#include "magnet/tvdiff.hpp"
