#pragma once

// Umbrella header for the damgt library: attributed-graph loading, dual
// positional encoding, multi-hop neighborhood tokenization, the mask-aware
// graph transformer with its training loop, and the analysis studies.

#include "damgt/analysis.hpp"
#include "damgt/binio.hpp"
#include "damgt/encoding.hpp"
#include "damgt/error.hpp"
#include "damgt/graph.hpp"
#include "damgt/kmeans.hpp"
#include "damgt/lanczos.hpp"
#include "damgt/mask.hpp"
#include "damgt/matrix.hpp"
#include "damgt/model.hpp"
#include "damgt/parallel.hpp"
#include "damgt/plot.hpp"
#include "damgt/rng.hpp"
#include "damgt/sha256.hpp"
#include "damgt/synth.hpp"
#include "damgt/tensor.hpp"
#include "damgt/tokenizer.hpp"
#include "damgt/training.hpp"
