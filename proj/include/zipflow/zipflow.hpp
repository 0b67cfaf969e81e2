#pragma once

#include "zipflow/core.hpp"
#include "zipflow/rng.hpp"
#include "zipflow/int_matrix.hpp"
#include "zipflow/rauzy.hpp"
#include "zipflow/zippered.hpp"
#include "zipflow/shift.hpp"
#include "zipflow/thermo.hpp"
#include "zipflow/suspension.hpp"
#include "zipflow/stats.hpp"
#include "zipflow/parallel.hpp"
#include "zipflow/ldlab.hpp"
#include "zipflow/config.hpp"
#include "zipflow/report_io.hpp"
