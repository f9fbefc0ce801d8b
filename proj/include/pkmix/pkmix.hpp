#pragma once

#include "autodiff.hpp"
#include "checkpoint.hpp"
#include "dense.hpp"
#include "equivalence.hpp"
#include "errors.hpp"
#include "mixer.hpp"
#include "monarch.hpp"
#include "permutation.hpp"
#include "pk_layer.hpp"
#include "rng.hpp"
#include "sizing.hpp"
#include "spectrum.hpp"
#include "train.hpp"
