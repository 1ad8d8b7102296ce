#ifndef P2PL_P2PL_HPP
#define P2PL_P2PL_HPP

// Everything except bench.hpp (which needs nlohmann/json) and alloc_stats.hpp.
#include <p2pl/correspond.hpp>
#include <p2pl/error.hpp>
#include <p2pl/geom.hpp>
#include <p2pl/grad.hpp>
#include <p2pl/gradcheck.hpp>
#include <p2pl/io.hpp>
#include <p2pl/kdtree.hpp>
#include <p2pl/metrics.hpp>
#include <p2pl/numeric.hpp>
#include <p2pl/parallel.hpp>
#include <p2pl/point_cloud.hpp>
#include <p2pl/rng.hpp>
#include <p2pl/solver.hpp>
#include <p2pl/sym3_eigen.hpp>
#include <p2pl/synth.hpp>

#endif  // P2PL_P2PL_HPP
