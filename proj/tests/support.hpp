#pragma once

// Shared test helpers for the Catch2 suites.

#include <catch_amalgamated.hpp>

#include "oracles.hpp"
