/* Copyright (c) 2026 The pgcc Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

#include "pgcc/checkpoint.hpp"
#include "pgcc/common.hpp"
#include "pgcc/config.hpp"
#include "pgcc/embedding.hpp"
#include "pgcc/encoder.hpp"
#include "pgcc/eval.hpp"
#include "pgcc/gradcheck.hpp"
#include "pgcc/hungarian.hpp"
#include "pgcc/losses.hpp"
#include "pgcc/optim.hpp"
#include "pgcc/scene.hpp"
#include "pgcc/sinkhorn.hpp"
#include "pgcc/trainer.hpp"
