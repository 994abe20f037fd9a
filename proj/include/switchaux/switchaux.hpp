#pragma once

#include "switchaux/tensor.hpp"
#include "switchaux/ops.hpp"
#include "switchaux/gradcheck.hpp"
#include "switchaux/random.hpp"
#include "switchaux/model.hpp"
#include "switchaux/losses.hpp"
#include "switchaux/schedule.hpp"
#include "switchaux/data.hpp"
#include "switchaux/image_io.hpp"
#include "switchaux/inference.hpp"
#include "switchaux/config.hpp"
#include "switchaux/checkpoint.hpp"
#include "switchaux/train.hpp"
#include "switchaux/experiment.hpp"
