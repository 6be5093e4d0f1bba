#pragma once

#include "crisk/metrics/ctd.hpp"
#include "crisk/metrics/evaluate.hpp"
