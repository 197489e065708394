#pragma once

#include "iwbench/baselines.hpp"
#include "iwbench/bench.hpp"
#include "iwbench/common.hpp"
#include "iwbench/csv.hpp"
#include "iwbench/dataset.hpp"
#include "iwbench/eval.hpp"
#include "iwbench/iwn.hpp"
#include "iwbench/kdtree.hpp"
#include "iwbench/kernel_mmd.hpp"
#include "iwbench/network.hpp"
#include "iwbench/rng.hpp"
