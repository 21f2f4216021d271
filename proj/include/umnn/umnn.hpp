#pragma once

// Unconstrained monotonic neural networks and the UMNN-MAF autoregressive
// flow: monotone scalar transforms built by integrating a positive network
// with Clenshaw-Curtis quadrature, composed into an exact-likelihood density
// estimator that samples by numerical inversion.

#include "umnn/common.hpp"
#include "umnn/flow.hpp"
#include "umnn/made.hpp"
#include "umnn/matrix.hpp"
#include "umnn/monotonic.hpp"
#include "umnn/nn.hpp"
#include "umnn/quadrature.hpp"
#include "umnn/rng.hpp"
#include "umnn/serialize.hpp"
#include "umnn/toy_data.hpp"
#include "umnn/train.hpp"
