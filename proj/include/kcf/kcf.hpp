#pragma once

#include "kcf/errors.hpp"
#include "kcf/tensor_algebra.hpp"
#include "kcf/io.hpp"
#include "kcf/plants.hpp"
#include "kcf/observables.hpp"
#include "kcf/babbling.hpp"
#include "kcf/selection.hpp"
#include "kcf/edmd.hpp"
#include "kcf/factorization.hpp"
#include "kcf/lmi.hpp"
#include "kcf/evaluation.hpp"
#include "kcf/config.hpp"
#include "kcf/pipeline.hpp"
