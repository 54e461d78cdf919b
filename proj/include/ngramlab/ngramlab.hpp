#pragma once

// Everything in one include.

#include "ngramlab/autodiff.hpp"
#include "ngramlab/classic.hpp"
#include "ngramlab/core.hpp"
#include "ngramlab/corpus.hpp"
#include "ngramlab/error.hpp"
#include "ngramlab/eval.hpp"
#include "ngramlab/gen.hpp"
#include "ngramlab/json_io.hpp"
#include "ngramlab/neural.hpp"
#include "ngramlab/pipeline.hpp"
#include "ngramlab/rng.hpp"
#include "ngramlab/stats.hpp"
