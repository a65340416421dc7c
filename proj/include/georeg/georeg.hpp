#pragma once

#include "georeg/attention.hpp"
#include "georeg/bench.hpp"
#include "georeg/config.hpp"
#include "georeg/core.hpp"
#include "georeg/embedding.hpp"
#include "georeg/geom.hpp"
#include "georeg/gradcheck.hpp"
#include "georeg/io.hpp"
#include "georeg/kdtree.hpp"
#include "georeg/losses.hpp"
#include "georeg/metrics.hpp"
#include "georeg/parallel.hpp"
#include "georeg/pipeline.hpp"
#include "georeg/point_match.hpp"
#include "georeg/registration.hpp"
#include "georeg/report.hpp"
#include "georeg/superpoint_match.hpp"
#include "georeg/synth.hpp"
