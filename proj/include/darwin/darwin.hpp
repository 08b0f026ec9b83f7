// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "darwin/checkpoint.hpp"
#include "darwin/evolution.hpp"
#include "darwin/fitness/external.hpp"
#include "darwin/fitness/fixture.hpp"
#include "darwin/fitness/probe_dump.hpp"
#include "darwin/fitness/tasks.hpp"
#include "darwin/fitness/toy_model.hpp"
#include "darwin/genome.hpp"
#include "darwin/mapper.hpp"
#include "darwin/merge.hpp"
#include "darwin/mri.hpp"
