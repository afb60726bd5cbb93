#pragma once

#include "hepco/baselines.hpp"
#include "hepco/client.hpp"
#include "hepco/config.hpp"
#include "hepco/encoder.hpp"
#include "hepco/experiment.hpp"
#include "hepco/generator.hpp"
#include "hepco/metrics.hpp"
#include "hepco/nn.hpp"
#include "hepco/prompt_model.hpp"
#include "hepco/seeding.hpp"
#include "hepco/server.hpp"
#include "hepco/taskstream.hpp"
