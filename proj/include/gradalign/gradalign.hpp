#pragma once

// Umbrella header for the whole library.

#include "gradalign/baselines.hpp"
#include "gradalign/checkpoint.hpp"
#include "gradalign/config.hpp"
#include "gradalign/errors.hpp"
#include "gradalign/gradient.hpp"
#include "gradalign/grpo.hpp"
#include "gradalign/harness.hpp"
#include "gradalign/metrics.hpp"
#include "gradalign/oracle.hpp"
#include "gradalign/policy.hpp"
#include "gradalign/problem.hpp"
#include "gradalign/reward_oracle.hpp"
#include "gradalign/rng.hpp"
#include "gradalign/scenarios.hpp"
#include "gradalign/selector.hpp"
#include "gradalign/textio.hpp"
