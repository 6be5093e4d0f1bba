#pragma once

#include "crisk/cohort/cohort.hpp"
#include "crisk/cohort/labels.hpp"
#include "crisk/cohort/split.hpp"
#include "crisk/cohort/synthetic.hpp"
