#pragma once

#include "fedegg/config.hpp"
#include "fedegg/data.hpp"
#include "fedegg/dataset.hpp"
#include "fedegg/engine.hpp"
#include "fedegg/errors.hpp"
#include "fedegg/federation.hpp"
#include "fedegg/guidance.hpp"
#include "fedegg/io.hpp"
#include "fedegg/matrix.hpp"
#include "fedegg/numerics.hpp"
#include "fedegg/objectives.hpp"
#include "fedegg/rng.hpp"
#include "fedegg/schedule.hpp"
#include "fedegg/strategies.hpp"
#include "fedegg/theory.hpp"
