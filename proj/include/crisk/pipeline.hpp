#pragma once

#include "crisk/pipeline/audit.hpp"
#include "crisk/pipeline/cv.hpp"
#include "crisk/pipeline/grid.hpp"
#include "crisk/pipeline/report.hpp"
#include "crisk/pipeline/search.hpp"
