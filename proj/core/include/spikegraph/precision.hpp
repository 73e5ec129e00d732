#pragma once

// The library is built in float32. Gradient oracles link a second build of the
// same sources in float64 (SPIKEGRAPH_DOUBLE); the inline namespace keeps the
// two instances apart so both may live in one executable.
#ifdef SPIKEGRAPH_DOUBLE
#define SPIKEGRAPH_PRECISION f64
#else
#define SPIKEGRAPH_PRECISION f32
#endif

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

#ifdef SPIKEGRAPH_DOUBLE
using Real = double;
#else
using Real = float;
#endif

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
