// Copyright 2026 The Ferumal Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ferumal/baseline.hpp"
#include "ferumal/checkpoint.hpp"
#include "ferumal/config.hpp"
#include "ferumal/data.hpp"
#include "ferumal/errors.hpp"
#include "ferumal/flow.hpp"
#include "ferumal/kernel.hpp"
#include "ferumal/layers.hpp"
#include "ferumal/training.hpp"
#include "ferumal/types.hpp"
