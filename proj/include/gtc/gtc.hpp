#pragma once

#include "gtc/cluster.hpp"
#include "gtc/error.hpp"
#include "gtc/graph.hpp"
#include "gtc/harness.hpp"
#include "gtc/io.hpp"
#include "gtc/jlt.hpp"
#include "gtc/linalg.hpp"
#include "gtc/lowrank.hpp"
#include "gtc/matrix.hpp"
#include "gtc/model.hpp"
#include "gtc/random.hpp"
#include "gtc/synth.hpp"
#include "gtc/transformer.hpp"
