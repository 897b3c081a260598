// Copyright 2026 The clickseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Convenience header for the in-process library. The network front end lives
// in clickseg/service.hpp and the command line in clickseg/cli.hpp.

#include "clickseg/checkpoint.hpp"
#include "clickseg/click.hpp"
#include "clickseg/data.hpp"
#include "clickseg/dataset.hpp"
#include "clickseg/engine.hpp"
#include "clickseg/grid.hpp"
#include "clickseg/metrics.hpp"
#include "clickseg/model.hpp"
#include "clickseg/oracle.hpp"
#include "clickseg/png.hpp"
#include "clickseg/rle.hpp"
#include "clickseg/rng.hpp"
#include "clickseg/synthetic.hpp"
#include "clickseg/trainer.hpp"
