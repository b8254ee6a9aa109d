#pragma once

#include "hiertest/cluster_tree.hpp"
#include "hiertest/engine.hpp"
#include "hiertest/fdist.hpp"
#include "hiertest/io.hpp"
#include "hiertest/lasso.hpp"
#include "hiertest/linalg.hpp"
#include "hiertest/newick.hpp"
#include "hiertest/parallel.hpp"
#include "hiertest/simulation.hpp"
#include "hiertest/standardize.hpp"

namespace hiertest {

inline constexpr const char* kVersion = "0.1.0";

} // namespace hiertest
