#pragma once

#include "caplab/core.hpp"
#include "caplab/space.hpp"
#include "caplab/dense_oracle.hpp"
#include "caplab/semigroup.hpp"
#include "caplab/kernel_cache.hpp"
#include "caplab/potentials.hpp"
#include "caplab/hausdorff.hpp"
#include "caplab/capacity.hpp"
#include "caplab/truncation.hpp"
#include "caplab/study.hpp"
