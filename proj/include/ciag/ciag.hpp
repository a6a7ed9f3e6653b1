#pragma once

#include "ciag/core.hpp"
#include "ciag/data_io.hpp"
#include "ciag/linalg.hpp"
#include "ciag/optimizers.hpp"
#include "ciag/problems.hpp"
#include "ciag/theory.hpp"
