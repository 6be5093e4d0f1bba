#pragma once

#include "crisk/features/matrix.hpp"
#include "crisk/features/pipeline.hpp"
